#include "mlmatvamp/model_io.hpp"

#include <cmath>
#include <fstream>

namespace mlmv {

namespace {

const Json& field(const Json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorKind::invalid_config, where + ": missing field '" + key + "'");
  return j.at(key);
}

double number(const Json& j, const std::string& what) {
  if (!j.is_number()) throw Error(ErrorKind::invalid_config, what + " must be a number");
  return j.get<double>();
}

Index count(const Json& j, const std::string& what) {
  if (!j.is_number_integer() || j.get<long long>() < 0)
    throw Error(ErrorKind::invalid_config, what + " must be a non-negative integer");
  return static_cast<Index>(j.get<long long>());
}

Json activation_to_json(const Activation& a) {
  switch (a.kind()) {
    case ActivationKind::custom:
      throw Error(ErrorKind::unsupported, "custom activation '" + a.name() + "' cannot be serialized");
    case ActivationKind::softplus: return Json{{"name", "softplus"}, {"width", a.width()}};
    default: return Json{{"name", a.name()}};
  }
}

Activation activation_from_json(const Json& j) {
  const std::string where = "activation";
  const Json& name = field(j, "name", where);
  if (!name.is_string()) throw Error(ErrorKind::invalid_config, "activation name must be a string");
  if (name.get<std::string>() == "softplus") return Activation::softplus(number(field(j, "width", where), "width"));
  return Activation::from_name(name.get<std::string>());
}

Json layer_to_json(const Layer& layer) {
  if (const auto* lin = std::get_if<LinearLayer>(&layer)) {
    return Json{{"type", "linear"},
                {"w", matrix_to_json(lin->w)},
                {"b", matrix_to_json(lin->b)},
                {"noise_prec", lin->noise_prec ? matrix_to_json(*lin->noise_prec) : Json(nullptr)}};
  }
  const auto& nl = std::get<NonlinearLayer>(layer);
  switch (nl.kind) {
    case NoiseKind::additive_gaussian:
      return Json{{"type", "nonlinear"},
                  {"noise", "additive_gaussian"},
                  {"activation", activation_to_json(nl.act)},
                  {"readout", nl.readout ? matrix_to_json(*nl.readout) : Json(nullptr)},
                  {"noise_cov", matrix_to_json(nl.noise_cov)}};
    case NoiseKind::linear_mixture: {
      Json maps = Json::array();
      for (const Mat& m : nl.maps) maps.push_back(matrix_to_json(m));
      return Json{{"type", "nonlinear"},
                  {"noise", "linear_mixture"},
                  {"maps", maps},
                  {"probs", nl.probs},
                  {"noise_cov", matrix_to_json(nl.noise_cov)}};
    }
    case NoiseKind::general:
      throw Error(ErrorKind::unsupported, "general nonlinear layers are code-defined and cannot be serialized");
  }
  return Json();
}

Layer layer_from_json(const Json& j, int ell) {
  const std::string where = "layer " + std::to_string(ell);
  const std::string type = field(j, "type", where).get<std::string>();
  if (type == "linear") {
    std::optional<Mat> prec;
    if (j.contains("noise_prec") && !j.at("noise_prec").is_null())
      prec = matrix_from_json(j.at("noise_prec"), where + " noise_prec");
    return LinearLayer::make(matrix_from_json(field(j, "w", where), where + " w"),
                             matrix_from_json(field(j, "b", where), where + " b"), prec);
  }
  if (type != "nonlinear") throw Error(ErrorKind::invalid_config, where + ": unknown type '" + type + "'");
  const std::string noise = field(j, "noise", where).get<std::string>();
  const Mat cov = matrix_from_json(field(j, "noise_cov", where), where + " noise_cov");
  if (noise == "additive_gaussian") {
    std::optional<Mat> readout;
    if (j.contains("readout") && !j.at("readout").is_null())
      readout = matrix_from_json(j.at("readout"), where + " readout");
    return NonlinearLayer::additive(activation_from_json(field(j, "activation", where)), cov, readout);
  }
  if (noise == "linear_mixture") {
    std::vector<Mat> maps;
    for (const Json& m : field(j, "maps", where)) maps.push_back(matrix_from_json(m, where + " map"));
    std::vector<double> probs;
    for (const Json& p : field(j, "probs", where)) probs.push_back(number(p, where + " prob"));
    return NonlinearLayer::linear_mixture(std::move(maps), std::move(probs), cov);
  }
  throw Error(ErrorKind::invalid_config, where + ": unknown noise '" + noise + "'");
}

}  // namespace

Json matrix_to_json(const Mat& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    rows.push_back(std::move(row));
  }
  return rows;
}

Mat matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorKind::invalid_config, what + " must be an array of rows");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = rows > 0 && j[0].is_array() ? static_cast<Index>(j[0].size()) : 0;
  Mat m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Json& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      throw Error(ErrorKind::invalid_config, what + ": ragged or malformed row " + std::to_string(i));
    for (Index k = 0; k < cols; ++k) m(i, k) = number(row[static_cast<std::size_t>(k)], what);
  }
  return m;
}

Json row_to_json(const RowVec& r) {
  Json out = Json::array();
  for (Index k = 0; k < r.size(); ++k) out.push_back(r(k));
  return out;
}

RowVec row_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw Error(ErrorKind::invalid_config, what + " must be an array");
  RowVec r(static_cast<Index>(j.size()));
  for (Index k = 0; k < r.size(); ++k) r(k) = number(j[static_cast<std::size_t>(k)], what);
  return r;
}

Json prior_to_json(const InputPrior& p) {
  if (p.kind == InputPrior::Kind::group_lasso)
    return Json{{"kind", "group_lasso"}, {"d", p.d}, {"lambda", p.lambda}};
  Json means = Json::array();
  Json covs = Json::array();
  for (std::size_t c = 0; c < p.weights.size(); ++c) {
    means.push_back(row_to_json(p.means[c]));
    covs.push_back(matrix_to_json(p.covs[c]));
  }
  Json j{{"kind", "gaussian_mixture"}, {"label", p.label}, {"d", p.d},
         {"weights", p.weights}, {"means", means}, {"covs", covs}};
  if (p.label == "bernoulli_gaussian") {
    j["rho"] = p.rho;
    j["variance"] = p.variance;
  }
  return j;
}

InputPrior prior_from_json(const Json& j) {
  const std::string where = "prior";
  const std::string kind = field(j, "kind", where).get<std::string>();
  if (kind == "group_lasso")
    return InputPrior::group_lasso(count(field(j, "d", where), "prior d"), number(field(j, "lambda", where), "lambda"));
  if (kind == "gaussian") {
    const Mat cov = matrix_from_json(field(j, "cov", where), "prior cov");
    if (j.contains("mean")) return InputPrior::gaussian(row_from_json(j.at("mean"), "prior mean"), cov);
    return InputPrior::gaussian(cov);
  }
  if (kind == "bernoulli_gaussian")
    return InputPrior::bernoulli_gaussian(count(field(j, "d", where), "prior d"), number(field(j, "rho", where), "rho"),
                                          number(field(j, "variance", where), "variance"));
  if (kind != "gaussian_mixture") throw Error(ErrorKind::invalid_config, "prior: unknown kind '" + kind + "'");
  std::vector<double> weights;
  for (const Json& w : field(j, "weights", where)) weights.push_back(number(w, "prior weight"));
  std::vector<RowVec> means;
  for (const Json& m : field(j, "means", where)) means.push_back(row_from_json(m, "prior mean"));
  std::vector<Mat> covs;
  for (const Json& c : field(j, "covs", where)) covs.push_back(matrix_from_json(c, "prior cov"));
  const std::vector<double> stored = weights;
  InputPrior p = InputPrior::mixture(std::move(weights), std::move(means), std::move(covs));
  // Keep already-normalized weights bit-exact.
  double total = 0.0;
  for (double w : stored) total += w;
  if (std::abs(total - 1.0) <= 1e-12) p.weights = stored;
  if (j.contains("label")) p.label = j.at("label").get<std::string>();
  if (j.contains("rho")) p.rho = number(j.at("rho"), "rho");
  if (j.contains("variance")) p.variance = number(j.at("variance"), "variance");
  return p;
}

Json model_to_json(const NetworkModel& model) {
  Json layers = Json::array();
  for (const Layer& l : model.layers) layers.push_back(layer_to_json(l));
  return Json{{"schema", 1}, {"d", model.d}, {"n0", model.n0}, {"prior", prior_to_json(model.prior)},
              {"layers", layers}};
}

NetworkModel model_from_json(const Json& j) {
  const std::string where = "model";
  if (!field(j, "schema", where).is_number_integer() || j.at("schema").get<int>() != 1)
    throw Error(ErrorKind::invalid_config, "model: unsupported schema (expected 1)");
  NetworkModel m;
  m.d = count(field(j, "d", where), "d");
  m.n0 = count(field(j, "n0", where), "n0");
  m.prior = prior_from_json(field(j, "prior", where));
  int ell = 1;
  for (const Json& l : field(j, "layers", where)) m.layers.push_back(layer_from_json(l, ell++));
  m.validate();
  return m;
}

void save_model(const NetworkModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::invalid_config, "cannot write model file '" + path + "'");
  out << model_to_json(model).dump(1) << '\n';
}

NetworkModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::invalid_config, "cannot read model file '" + path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::invalid_config, "model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace mlmv
