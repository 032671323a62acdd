#include "robustmal/model_io.hpp"

#include "robustmal/erdalt.hpp"
#include "robustmal/error.hpp"
#include "robustmal/io.hpp"
#include "robustmal/selection.hpp"

namespace robustmal {

using nlohmann::json;

std::unique_ptr<Detector> load_detector(const json& record) {
  try {
    if (record.at("format_version").get<int>() != kModelFormatVersion) {
      throw Error(ErrorCode::kIntegrityError, "unsupported model format_version");
    }
    const auto kind = record.at("model_kind").get<std::string>();
    const MappingId schema = parse_mapping(record.at("schema_id").get<std::string>());
    const json& p = record.at("parameters");
    std::unique_ptr<Detector> d;
    if (kind == "mlp" || kind == "mlp_monotone") {
      d = MlpDetector::from_parameters(p, schema);
    } else if (kind == "gbt" || kind == "gbt_monotone") {
      d = GbtDetector::from_parameters(p, schema);
    } else if (kind == "knn") {
      d = KnnDetector::from_parameters(p, schema);
    } else if (kind == "erdalt" || kind == "erdalt_linear") {
      d = ErdaltDetector::from_parameters(p, schema);
    } else if (kind == "selected") {
      d = std::make_unique<SelectedDetector>(p.at("selection").get<FeatureSelection>(), load_detector(p.at("inner")));
    } else if (kind == "constant") {
      d = std::make_unique<ConstantDetector>(p.at("value").get<double>(), schema,
                                             record.at("input_dimension").get<std::size_t>());
    } else if (kind == "linear") {
      d = std::make_unique<LinearDetector>(p.at("weights").get<std::vector<double>>(),
                                           p.at("bias").get<double>(), schema);
    } else {
      throw Error(ErrorCode::kIntegrityError, "unknown model_kind '" + kind + "'");
    }
    if (d->info().model_kind != kind) {
      throw Error(ErrorCode::kIntegrityError, "model_kind does not match the parameters");
    }
    d->set_threshold(record.at("threshold").get<double>());
    return d;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIntegrityError, std::string("malformed model record: ") + e.what());
  }
}

std::unique_ptr<Detector> load_detector_file(const std::filesystem::path& path) {
  return load_detector(read_json_file(path));
}

void save_detector(const Detector& d, const std::filesystem::path& path) {
  write_json_file(path, d.to_json());
}

}  // namespace robustmal
