#include "drift/io.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace drift {

namespace {

using nlohmann::json;

std::string num(double v) { return json(v).dump(); }  // shortest round-trip

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    while (!cur.empty() && (cur.back() == '\r' || cur.back() == ' ')) cur.pop_back();
    size_t start = cur.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? "" : cur.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& cell, size_t row, const std::string& col) {
  try {
    size_t pos = 0;
    double v = std::stod(cell, &pos);
    if (pos != cell.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("non-numeric cell '" + cell + "' at row " +
                             std::to_string(row) + ", column " + col);
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line != "\r") lines.push_back(line);
  return lines;
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::runtime_error("config: unknown key '" + it.key() + "' in " + where);
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw std::runtime_error("config: " + what + " must be a 2-D array");
  Matrix m(j.size(), j[0].size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (j[i].size() != j[0].size())
      throw std::runtime_error("config: ragged rows in " + what);
    for (size_t c = 0; c < j[i].size(); ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Vector vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw std::runtime_error("config: " + what + " must be an array");
  Vector v(j.size());
  for (size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config parse error: " + std::string(e.what()));
  }
  reject_unknown_keys(doc, {"seed", "factor", "sim", "sweep"}, "top level");

  RunConfig rc;
  if (doc.contains("seed")) rc.sim.seed = doc["seed"].get<std::uint64_t>();

  if (doc.contains("sim")) {
    const json& s = doc["sim"];
    reject_unknown_keys(s,
                        {"N", "p", "K", "J", "T", "r", "sigma_v",
                         "sigma_v_external", "beta_params", "gamma_geo",
                         "lambda0", "lambda1", "item_intercepts", "reps",
                         "fresh_test_set"},
                        "sim");
    if (s.contains("N")) rc.sim.N = s["N"].get<int>();
    if (s.contains("p")) rc.sim.p = s["p"].get<int>();
    if (s.contains("K")) rc.sim.K = s["K"].get<int>();
    if (s.contains("J")) rc.sim.J = s["J"].get<int>();
    if (s.contains("T")) rc.sim.T = s["T"].get<int>();
    if (s.contains("r")) rc.sim.r = s["r"].get<double>();
    if (s.contains("sigma_v")) rc.sim.sigma_v = s["sigma_v"].get<double>();
    if (s.contains("sigma_v_external"))
      rc.sim.sigma_v_external = s["sigma_v_external"].get<double>();
    if (s.contains("beta_params")) {
      rc.sim.beta_a = s["beta_params"][0].get<double>();
      rc.sim.beta_b = s["beta_params"][1].get<double>();
    }
    if (s.contains("gamma_geo"))
      rc.sim.gamma_geo = vector_from_json(s["gamma_geo"], "gamma_geo");
    if (s.contains("lambda0"))
      rc.sim.Lambda0 = matrix_from_json(s["lambda0"], "lambda0");
    if (s.contains("lambda1"))
      rc.sim.Lambda1 = matrix_from_json(s["lambda1"], "lambda1");
    if (s.contains("item_intercepts"))
      rc.sim.item_intercept = s["item_intercepts"].get<double>();
    if (s.contains("reps")) rc.sim.reps = s["reps"].get<int>();
    if (s.contains("fresh_test_set"))
      rc.sim.fresh_test_set = s["fresh_test_set"].get<bool>();
  }

  if (doc.contains("factor")) {
    const json& f = doc["factor"];
    reject_unknown_keys(
        f, {"K", "C", "max_sweeps", "tol", "init", "seed", "backtracking"},
        "factor");
    FactorConfig& fc = rc.sim.factor;
    if (f.contains("K")) fc.K = f["K"].get<int>();
    if (f.contains("C")) fc.C = f["C"].get<double>();
    if (f.contains("max_sweeps")) fc.max_sweeps = f["max_sweeps"].get<int>();
    if (f.contains("tol")) fc.tol = f["tol"].get<double>();
    if (f.contains("seed")) fc.seed = f["seed"].get<std::uint64_t>();
    if (f.contains("init")) {
      const std::string init = f["init"].get<std::string>();
      if (init == "svd") fc.init = FactorInit::svd;
      else if (init == "random") fc.init = FactorInit::random;
      else throw std::runtime_error("config: init must be svd or random");
    }
    if (f.contains("backtracking")) {
      const json& b = f["backtracking"];
      reject_unknown_keys(
          b, {"initial_step", "shrink", "armijo_const", "max_halvings"},
          "backtracking");
      if (b.contains("initial_step"))
        fc.backtracking.initial_step = b["initial_step"].get<double>();
      if (b.contains("shrink")) fc.backtracking.shrink = b["shrink"].get<double>();
      if (b.contains("armijo_const"))
        fc.backtracking.armijo_const = b["armijo_const"].get<double>();
      if (b.contains("max_halvings"))
        fc.backtracking.max_halvings = b["max_halvings"].get<int>();
    }
  }

  if (doc.contains("sweep")) {
    const json& sw = doc["sweep"];
    reject_unknown_keys(sw, {"param", "values"}, "sweep");
    const std::string param = sw.value("param", "r");
    if (param == "r") rc.sweep.param = SweepParam::r;
    else if (param == "sigma_v") rc.sweep.param = SweepParam::sigma_v;
    else throw std::runtime_error("config: sweep param must be r or sigma_v");
    if (sw.contains("values"))
      for (const auto& v : sw["values"]) rc.sweep.values.push_back(v.get<double>());
  }
  if (rc.sweep.values.empty())
    rc.sweep.values.push_back(rc.sweep.param == SweepParam::r ? rc.sim.r
                                                              : rc.sim.sigma_v);

  rc.sim.apply_defaults();
  rc.raw_json = doc.dump(2) + "\n";
  return rc;
}

ResponseDataset load_dataset_csv(const std::filesystem::path& data_path,
                                 const std::filesystem::path& schema_path) {
  auto schema_lines = read_lines(schema_path);
  if (schema_lines.empty()) throw std::runtime_error("empty schema file");
  auto sheader = split_csv_line(schema_lines[0]);
  if (sheader.size() < 2 || sheader[0] != "name" || sheader[1] != "kind")
    throw std::runtime_error("schema header must be: name,kind");
  std::vector<ItemSchema> schema;
  for (size_t r = 1; r < schema_lines.size(); ++r) {
    auto cells = split_csv_line(schema_lines[r]);
    if (cells.size() != 2)
      throw std::runtime_error("schema row " + std::to_string(r) + ": need 2 cells");
    ItemKind kind;
    if (cells[1] == "binary") kind = ItemKind::binary;
    else if (cells[1] == "continuous") kind = ItemKind::continuous;
    else
      throw std::runtime_error("schema row " + std::to_string(r) +
                               ": unsupported item kind '" + cells[1] +
                               "' (ordinal items are not supported)");
    schema.push_back({cells[0], kind});
  }

  auto lines = read_lines(data_path);
  if (lines.size() < 2) throw std::runtime_error("data CSV needs header + rows");
  auto header = split_csv_line(lines[0]);
  const size_t J = schema.size();
  if (header.size() < 2 + 1 + J)
    throw std::runtime_error("data CSV header too short for schema");
  if (header[0] != "id" || header[1] != "a")
    throw std::runtime_error("data CSV must start with columns: id,a");
  size_t p = 0;
  size_t col = 2;
  while (col < header.size() && header[col] == "x" + std::to_string(p + 1)) {
    ++p;
    ++col;
  }
  if (p == 0) throw std::runtime_error("data CSV: no covariate columns x1..xp");
  for (size_t j = 0; j < J; ++j, ++col) {
    if (col >= header.size() || header[col] != "y" + std::to_string(j + 1))
      throw std::runtime_error("data CSV: expected column y" + std::to_string(j + 1));
  }
  bool has_o = false;
  if (col < header.size()) {
    if (header[col] != "o")
      throw std::runtime_error("data CSV: unexpected trailing column " + header[col]);
    has_o = true;
    ++col;
  }
  if (col != header.size())
    throw std::runtime_error("data CSV: extra columns after 'o'");

  const size_t N = lines.size() - 1;
  ResponseDataset data;
  data.X.resize(N, p);
  data.A.resize(N);
  data.Y.resize(N, J);
  data.schema = schema;
  Vector o(N);
  for (size_t r = 0; r < N; ++r) {
    auto cells = split_csv_line(lines[r + 1]);
    if (cells.size() != header.size())
      throw std::runtime_error("data row " + std::to_string(r + 1) +
                               ": wrong cell count");
    size_t cc = 1;
    const double a = parse_number(cells[cc], r + 1, "a");
    if (a != 0.0 && a != 1.0)
      throw std::runtime_error("data row " + std::to_string(r + 1) +
                               ": treatment must be 0/1");
    data.A[r] = int(a);
    ++cc;
    for (size_t c = 0; c < p; ++c, ++cc)
      data.X(r, c) = parse_number(cells[cc], r + 1, header[cc]);
    for (size_t j = 0; j < J; ++j, ++cc)
      data.Y(r, j) = parse_number(cells[cc], r + 1, header[cc]);
    if (has_o) o[r] = parse_number(cells[cc], r + 1, "o");
  }
  if (has_o) data.O = o;
  data.validate();
  return data;
}

std::pair<std::vector<std::string>, Matrix> load_covariates_csv(
    const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < 2) throw std::runtime_error("covariates CSV needs rows");
  auto header = split_csv_line(lines[0]);
  if (header.empty() || header[0] != "id")
    throw std::runtime_error("covariates CSV must start with 'id'");
  const size_t p = header.size() - 1;
  for (size_t c = 0; c < p; ++c)
    if (header[c + 1] != "x" + std::to_string(c + 1))
      throw std::runtime_error("covariates CSV: expected column x" +
                               std::to_string(c + 1));
  std::vector<std::string> ids;
  Matrix X(lines.size() - 1, p);
  for (size_t r = 1; r < lines.size(); ++r) {
    auto cells = split_csv_line(lines[r]);
    if (cells.size() != header.size())
      throw std::runtime_error("covariates row " + std::to_string(r) +
                               ": wrong cell count");
    ids.push_back(cells[0]);
    for (size_t c = 0; c < p; ++c)
      X(r - 1, c) = parse_number(cells[c + 1], r, header[c + 1]);
  }
  return {ids, X};
}

void save_model_artifact(const DriftModel& model,
                         const std::vector<ItemSchema>& schema,
                         std::uint64_t seed, const std::filesystem::path& path) {
  json doc;
  doc["format_version"] = kArtifactVersion;
  json items = json::array();
  for (const auto& s : schema)
    items.push_back({{"name", s.name},
                     {"kind", s.kind == ItemKind::binary ? "binary" : "continuous"}});
  doc["schema"] = items;
  doc["W"] = matrix_to_json(model.factor_fit.W);
  doc["zeta"] = vector_to_json(model.factor_fit.zeta);
  doc["B"] = matrix_to_json(model.ite.B);
  doc["anchor"] = {{"gamma", vector_to_json(model.anchor.gamma)},
                   {"zeta", model.anchor.zeta}};
  doc["delta"] = model.delta;
  doc["gamma_star"] = vector_to_json(model.gamma_star);
  doc["provenance"] = {
      {"geo_source",
       model.geo_source == GeoSource::observed ? "observed" : "minimax_center"},
      {"method",
       model.ite.method == IteMethod::randomized_ols ? "randomized" : "dr"}};
  doc["seed"] = seed;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

LoadedModel load_model_artifact(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("model parse error: " + std::string(e.what()));
  }
  if (!doc.contains("format_version") ||
      doc["format_version"].get<std::string>() != kArtifactVersion)
    throw std::runtime_error("model artifact version mismatch");

  LoadedModel lm;
  for (const auto& s : doc["schema"])
    lm.schema.push_back({s["name"].get<std::string>(),
                         s["kind"].get<std::string>() == "binary"
                             ? ItemKind::binary
                             : ItemKind::continuous});
  lm.model.factor_fit.W = matrix_from_json(doc["W"], "W");
  lm.model.factor_fit.zeta = vector_from_json(doc["zeta"], "zeta");
  lm.model.ite.B = matrix_from_json(doc["B"], "B");
  lm.model.anchor.gamma = vector_from_json(doc["anchor"]["gamma"], "anchor.gamma");
  lm.model.anchor.zeta = doc["anchor"]["zeta"].get<double>();
  lm.model.delta = doc["delta"].get<double>();
  lm.model.gamma_star = vector_from_json(doc["gamma_star"], "gamma_star");
  lm.model.geo_source = doc["provenance"]["geo_source"].get<std::string>() ==
                                "observed"
                            ? GeoSource::observed
                            : GeoSource::minimax_center;
  lm.model.ite.method =
      doc["provenance"]["method"].get<std::string>() == "randomized"
          ? IteMethod::randomized_ols
          : IteMethod::dr_learner;
  lm.seed = doc["seed"].get<std::uint64_t>();
  return lm;
}

void write_study_csv(const StudyReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sweep_param,sweep_value,rep,method,metric,value\n";
  for (const auto& rec : report.records)
    out << rec.sweep_param << ',' << num(rec.sweep_value) << ',' << rec.rep
        << ',' << rec.method << ',' << rec.metric << ',' << num(rec.value)
        << '\n';
}

void write_summary_csv(const StudyReport& report, const std::filesystem::path& path) {
  std::map<std::tuple<std::string, double, std::string, std::string>,
           std::pair<double, int>>
      agg;
  for (const auto& rec : report.records) {
    auto& cell = agg[{rec.sweep_param, rec.sweep_value, rec.method, rec.metric}];
    cell.first += rec.value;
    cell.second += 1;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "sweep_param,sweep_value,method,metric,mean\n";
  for (const auto& [key, cell] : agg) {
    const auto& [param, value, method, metric] = key;
    out << param << ',' << num(value) << ',' << method << ',' << metric << ','
        << num(cell.first / cell.second) << '\n';
  }
}

}  // namespace drift
