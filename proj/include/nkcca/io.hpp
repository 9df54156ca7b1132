#pragma once

// Text record for fitted models:
//   nkcca-model 1
//   lambda <l1> <l2>
//   dims <L>
//   kernel1 <family> <sigma> | kernel1 none
//   kernel2 ...
//   landmarks1 <m> <i_1> <w_1> ... <i_m> <w_m>
//   landmarks2 ...
//   matrix <name> <rows> <cols> followed by row-major values
// Matrices: rho (L x 1), alpha_prime, beta_prime, alpha, beta, and optionally
// train1, train2. Values are written with 17 significant digits.

#include <nkcca/kcca.hpp>

#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <string>

namespace nkcca {

namespace detail {

inline void write_matrix(std::ostream& os, const std::string& name, const Matrix& m) {
  os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? " " : "") << m(i, j);
    os << '\n';
  }
}

inline void write_kernel(std::ostream& os, const std::string& key, const std::optional<KernelSpec>& k) {
  os << key;
  if (k)
    os << ' ' << to_string(k->family) << ' ' << k->sigma << '\n';
  else
    os << " none\n";
}

inline std::optional<KernelSpec> read_kernel(std::istream& is, const std::string& key) {
  std::string tag, family;
  is >> tag >> family;
  require(tag == key, "read_model: expected '" + key + "'");
  if (family == "none") return std::nullopt;
  double sigma = 0.0;
  is >> sigma;
  KernelSpec spec = KernelSpec::rbf(sigma);
  spec.family = kernel_family_from_string(family);
  spec.validate();
  return spec;
}

inline void write_landmarks(std::ostream& os, const std::string& key, const std::vector<Index>& idx,
                            const std::vector<double>& w) {
  os << key << ' ' << idx.size();
  for (std::size_t j = 0; j < idx.size(); ++j) os << ' ' << idx[j] << ' ' << w[j];
  os << '\n';
}

inline void read_landmarks(std::istream& is, const std::string& key, std::vector<Index>& idx,
                           std::vector<double>& w) {
  std::string tag;
  std::size_t m = 0;
  is >> tag >> m;
  require(tag == key && static_cast<bool>(is), "read_model: expected '" + key + "'");
  idx.resize(m);
  w.resize(m);
  for (std::size_t j = 0; j < m; ++j) is >> idx[j] >> w[j];
}

}  // namespace detail

inline void write_model(std::ostream& os, const KccaModel& m, bool include_training = true) {
  os << std::setprecision(17);
  os << "nkcca-model 1\n";
  os << "lambda " << m.lambda1 << ' ' << m.lambda2 << '\n';
  os << "dims " << m.dims << '\n';
  detail::write_kernel(os, "kernel1", m.kernel1);
  detail::write_kernel(os, "kernel2", m.kernel2);
  detail::write_landmarks(os, "landmarks1", m.landmarks1, m.landmark_weights1);
  detail::write_landmarks(os, "landmarks2", m.landmarks2, m.landmark_weights2);
  detail::write_matrix(os, "rho", m.rho);
  detail::write_matrix(os, "alpha_prime", m.alpha_prime);
  detail::write_matrix(os, "beta_prime", m.beta_prime);
  detail::write_matrix(os, "alpha", m.alpha);
  detail::write_matrix(os, "beta", m.beta);
  if (include_training && m.train1 && m.train2) {
    detail::write_matrix(os, "train1", *m.train1);
    detail::write_matrix(os, "train2", *m.train2);
  }
  os << "end\n";
}

inline KccaModel read_model(std::istream& is) {
  std::string tag;
  int version = 0;
  is >> tag >> version;
  detail::require(tag == "nkcca-model", "read_model: not an nkcca-model record");
  detail::require(version == 1, "read_model: unsupported version " + std::to_string(version));
  KccaModel m;
  is >> tag >> m.lambda1 >> m.lambda2;
  detail::require(tag == "lambda", "read_model: expected 'lambda'");
  is >> tag >> m.dims;
  detail::require(tag == "dims", "read_model: expected 'dims'");
  m.kernel1 = detail::read_kernel(is, "kernel1");
  m.kernel2 = detail::read_kernel(is, "kernel2");
  detail::read_landmarks(is, "landmarks1", m.landmarks1, m.landmark_weights1);
  detail::read_landmarks(is, "landmarks2", m.landmarks2, m.landmark_weights2);
  std::map<std::string, Matrix> mats;
  while (is >> tag && tag != "end") {
    detail::require(tag == "matrix", "read_model: unexpected token '" + tag + "'");
    std::string name;
    Index rows = 0, cols = 0;
    is >> name >> rows >> cols;
    detail::require(static_cast<bool>(is) && rows >= 0 && cols >= 0, "read_model: bad matrix header");
    Matrix v(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) is >> v(i, j);
    detail::require(static_cast<bool>(is), "read_model: truncated matrix '" + name + "'");
    mats[name] = std::move(v);
  }
  detail::require(tag == "end", "read_model: missing 'end'");
  auto take = [&](const std::string& name) -> Matrix {
    auto it = mats.find(name);
    detail::require(it != mats.end(), "read_model: missing matrix '" + name + "'");
    return it->second;
  };
  m.rho = take("rho");
  m.alpha_prime = take("alpha_prime");
  m.beta_prime = take("beta_prime");
  m.alpha = take("alpha");
  m.beta = take("beta");
  if (mats.count("train1") && mats.count("train2")) {
    m.train1 = std::make_shared<const Matrix>(take("train1"));
    m.train2 = std::make_shared<const Matrix>(take("train2"));
  }
  return m;
}

inline void save_model(const std::string& path, const KccaModel& m, bool include_training = true) {
  std::ofstream os(path);
  detail::require(static_cast<bool>(os), "save_model: cannot open '" + path + "'");
  write_model(os, m, include_training);
}

inline KccaModel load_model(const std::string& path) {
  std::ifstream is(path);
  detail::require(static_cast<bool>(is), "load_model: cannot open '" + path + "'");
  return read_model(is);
}

}  // namespace nkcca
