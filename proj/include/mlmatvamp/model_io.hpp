#pragma once

#include "mlmatvamp/model.hpp"

#include <json.hpp>
#include <string>

namespace mlmv {

using Json = nlohmann::json;

// Matrices are arrays of rows. Doubles are written with round-trip precision.
Json matrix_to_json(const Mat& m);
Mat matrix_from_json(const Json& j, const std::string& what);
Json row_to_json(const RowVec& r);
RowVec row_from_json(const Json& j, const std::string& what);

Json prior_to_json(const InputPrior& p);
InputPrior prior_from_json(const Json& j);

// Schema 1; see docs/model_format.md. General layers and custom activations are
// code-defined and cannot be serialized.
Json model_to_json(const NetworkModel& model);
NetworkModel model_from_json(const Json& j);

void save_model(const NetworkModel& model, const std::string& path);
NetworkModel load_model(const std::string& path);

}  // namespace mlmv
