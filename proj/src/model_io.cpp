#include "mfh/model_io.hpp"

#include <fstream>

namespace mfh {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& name) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) throw ShapeError(name + ": expected a nested array");
  // A flat array is read as a column vector.
  if (!j.front().is_array()) {
    Matrix m(static_cast<Eigen::Index>(j.size()), 1);
    for (std::size_t r = 0; r < j.size(); ++r) m(static_cast<Eigen::Index>(r), 0) = j[r].get<double>();
    return m;
  }
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw ShapeError(name + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
  }
  return m;
}

namespace {

Matrix read_or(const json& j, const char* key, Eigen::Index rows, Eigen::Index cols) {
  if (!j.contains(key)) return Matrix::Zero(rows, cols);
  return matrix_from_json(j.at(key), key);
}

}  // namespace

MeanFieldJumpModel model_from_json(const json& j) {
  if (!j.contains("dims") || !j.contains("T")) throw ShapeError("model: 'dims' and 'T' are required");
  const json& d = j.at("dims");
  Dims dims{d.at("n").get<int>(), d.at("nu").get<int>(), d.at("nv").get<int>()};
  if (dims.n <= 0 || dims.nu <= 0 || dims.nv <= 0) throw ShapeError("model: dims must be positive");
  const int n = dims.n, nu = dims.nu, nv = dims.nv;

  MeanFieldJumpModel m;
  m.dims = dims;
  m.T = j.at("T").get<double>();
  m.A = read_or(j, "A", n, n);
  m.Abar = read_or(j, "Abar", n, n);
  m.C = read_or(j, "C", n, n);
  m.Cbar = read_or(j, "Cbar", n, n);
  m.B1 = read_or(j, "B1", n, nv);
  m.B1bar = read_or(j, "B1bar", n, nv);
  m.D1 = read_or(j, "D1", n, nv);
  m.D1bar = read_or(j, "D1bar", n, nv);
  m.B2 = read_or(j, "B2", n, nu);
  m.B2bar = read_or(j, "B2bar", n, nu);
  m.D2 = read_or(j, "D2", n, nu);
  m.D2bar = read_or(j, "D2bar", n, nu);
  m.M = j.contains("M") ? matrix_from_json(j.at("M"), "M") : Matrix(Matrix::Identity(n, n));
  if (j.contains("jump_atoms")) {
    for (const json& a : j.at("jump_atoms")) {
      JumpAtom atom;
      atom.weight = a.at("weight").get<double>();
      atom.E = read_or(a, "E", n, n);
      atom.Ebar = read_or(a, "Ebar", n, n);
      atom.F1 = read_or(a, "F1", n, nv);
      atom.F1bar = read_or(a, "F1bar", n, nv);
      atom.F2 = read_or(a, "F2", n, nu);
      atom.F2bar = read_or(a, "F2bar", n, nu);
      m.jump_atoms.push_back(std::move(atom));
    }
  }
  return m;
}

json model_to_json(const MeanFieldJumpModel& m) {
  json j;
  j["dims"] = {{"n", m.dims.n}, {"nu", m.dims.nu}, {"nv", m.dims.nv}};
  j["T"] = m.T;
  j["A"] = matrix_to_json(m.A);
  j["Abar"] = matrix_to_json(m.Abar);
  j["C"] = matrix_to_json(m.C);
  j["Cbar"] = matrix_to_json(m.Cbar);
  j["B1"] = matrix_to_json(m.B1);
  j["B1bar"] = matrix_to_json(m.B1bar);
  j["D1"] = matrix_to_json(m.D1);
  j["D1bar"] = matrix_to_json(m.D1bar);
  j["B2"] = matrix_to_json(m.B2);
  j["B2bar"] = matrix_to_json(m.B2bar);
  j["D2"] = matrix_to_json(m.D2);
  j["D2bar"] = matrix_to_json(m.D2bar);
  j["M"] = matrix_to_json(m.M);
  json atoms = json::array();
  for (const JumpAtom& a : m.jump_atoms) {
    atoms.push_back({{"weight", a.weight},
                     {"E", matrix_to_json(a.E)},
                     {"Ebar", matrix_to_json(a.Ebar)},
                     {"F1", matrix_to_json(a.F1)},
                     {"F1bar", matrix_to_json(a.F1bar)},
                     {"F2", matrix_to_json(a.F2)},
                     {"F2bar", matrix_to_json(a.F2bar)}});
  }
  j["jump_atoms"] = std::move(atoms);
  return j;
}

MeanFieldJumpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open model file: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("cannot parse model file " + path.string() + ": " + e.what());
  }
  MeanFieldJumpModel m;
  try {
    m = model_from_json(j);
  } catch (const json::exception& e) {
    throw ShapeError("malformed model file " + path.string() + ": " + e.what());
  }
  require_valid(m);
  return m;
}

void save_model(const MeanFieldJumpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write model file: " + path.string());
  out << model_to_json(model).dump(2) << '\n';
}

}  // namespace mfh
