#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mfh/model.hpp"

namespace mfh {

// JSON model files. Matrices are nested row-major arrays; see README.md for
// the full schema. Missing coefficient matrices default to zero and a missing
// "M" defaults to the n×n identity.
MeanFieldJumpModel model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const MeanFieldJumpModel& model);

/// Reads and validates a model file. Throws InvalidArgument naming the path
/// when the file cannot be opened or parsed, ShapeError when it is malformed.
MeanFieldJumpModel load_model(const std::filesystem::path& path);
void save_model(const MeanFieldJumpModel& model, const std::filesystem::path& path);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, const std::string& name);

}  // namespace mfh
