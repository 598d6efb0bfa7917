#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <stdexcept>
#include <string>
#include <vector>

namespace cdsk {

using Index = Eigen::Index;
using VectorXd = Eigen::VectorXd;
using VectorXi = Eigen::VectorXi;
using MatrixXd = Eigen::MatrixXd;
using Matrix3d = Eigen::Matrix3d;
using Vector3d = Eigen::Vector3d;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

// Flattened 3n vectors are axis-major: [x_1..x_n, y_1..y_n, z_1..z_n].
// Flattened per-tet (or per-cluster) 3x3 matrices are element-major, row-major
// inside each element: entry (a, b) of element j sits at 9 j + 3 a + b.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DegenerateTetError : public Error {
 public:
  DegenerateTetError(const std::string& what, std::vector<Index> tets)
      : Error(what), tets_(std::move(tets)) {}
  const std::vector<Index>& tets() const { return tets_; }

 private:
  std::vector<Index> tets_;
};

}  // namespace cdsk
