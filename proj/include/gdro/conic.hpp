#ifndef GDRO_CONIC_HPP
#define GDRO_CONIC_HPP

// Standard-form conic programs:
//   minimize c^T z  subject to  A z + s = b,  s in K_1 x ... x K_m.

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "gdro/error.hpp"

namespace gdro {

enum class ConeKind { Zero, Nonnegative, SecondOrder, PSD };

std::string_view to_string(ConeKind k);

struct Cone {
  ConeKind kind = ConeKind::Nonnegative;
  /// Matrix dimension d for PSD (d(d+1)/2 rows), vector length otherwise.
  Eigen::Index size = 1;

  Eigen::Index rows() const { return kind == ConeKind::PSD ? size * (size + 1) / 2 : size; }
  /// Barrier degree: 0 for Zero, size for Nonnegative and PSD, 1 for SecondOrder.
  Eigen::Index degree() const;
};

/// A named block of decision variables inside z.
struct VarSpan {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index length = 0;
};

struct ConicProgram {
  Eigen::VectorXd c;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::vector<Cone> cones;
  std::vector<VarSpan> var_map;

  Eigen::Index num_vars() const { return c.size(); }
  Eigen::Index num_rows() const { return b.size(); }

  bool has_span(std::string_view name) const;
  const VarSpan& span(std::string_view name) const;
  Eigen::VectorXd extract(const Eigen::VectorXd& z, std::string_view name) const;
  double scalar(const Eigen::VectorXd& z, std::string_view name) const;

  /// Checks row/column counts and that var_map spans are disjoint and covering.
  void validate() const;
};

/// Incremental construction of a ConicProgram: declare variables, then
/// append cone blocks and fill their rows.
class ProgramBuilder {
 public:
  /// Appends a named span of `length` variables and returns its offset.
  Eigen::Index add_variables(const std::string& name, Eigen::Index length);

  /// Appends a cone and returns the index of its first row.
  Eigen::Index add_cone(Cone cone);

  void set_cost(Eigen::Index col, double value);
  void add_coef(Eigen::Index row, Eigen::Index col, double value);
  void set_rhs(Eigen::Index row, double value);

  Eigen::Index num_vars() const { return nvars_; }
  Eigen::Index num_rows() const { return nrows_; }

  ConicProgram build() const;

 private:
  struct Entry {
    Eigen::Index row, col;
    double value;
  };
  Eigen::Index nvars_ = 0;
  Eigen::Index nrows_ = 0;
  std::vector<VarSpan> spans_;
  std::vector<Cone> cones_;
  std::vector<Entry> entries_;
  std::vector<std::pair<Eigen::Index, double>> cost_;
  std::vector<std::pair<Eigen::Index, double>> rhs_;
};

/// Writes the program in SDPA sparse format. SDPA's primal is
///   minimize sum_i c_i x_i  s.t.  sum_i F_i x_i - F_0 >= 0,
/// so F_i = -mat(A column i) and F_0 = -mat(b). Block layout:
///   * Nonnegative and Zero cones share one diagonal LP block (a Zero row
///     becomes the pair s >= 0, -s >= 0);
///   * each SecondOrder cone of size m becomes an m x m arrow block
///     [[s0, s1^T], [s1, s0 I]];
///   * each PSD cone becomes a d x d block.
/// Entry lines are `matno blkno i j value` with i <= j (1-based), values
/// printed with 17 significant digits, ordered by (matno, blkno, i, j).
void write_sdpa(std::ostream& out, const ConicProgram& prog);

}  // namespace gdro

#endif  // GDRO_CONIC_HPP
