#include "gdro/conic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <tuple>

namespace gdro {

std::string_view to_string(ConeKind k) {
  switch (k) {
    case ConeKind::Zero: return "zero";
    case ConeKind::Nonnegative: return "nonnegative";
    case ConeKind::SecondOrder: return "second_order";
    case ConeKind::PSD: return "psd";
  }
  return "zero";
}

Eigen::Index Cone::degree() const {
  switch (kind) {
    case ConeKind::Zero: return 0;
    case ConeKind::Nonnegative: return size;
    case ConeKind::SecondOrder: return 1;
    case ConeKind::PSD: return size;
  }
  return 0;
}

bool ConicProgram::has_span(std::string_view name) const {
  return std::any_of(var_map.begin(), var_map.end(),
                     [&](const VarSpan& s) { return s.name == name; });
}

const VarSpan& ConicProgram::span(std::string_view name) const {
  for (const auto& s : var_map)
    if (s.name == name) return s;
  throw Error(ErrorCode::InvalidModel, "no variable span named '" + std::string(name) + "'");
}

Eigen::VectorXd ConicProgram::extract(const Eigen::VectorXd& z, std::string_view name) const {
  const VarSpan& s = span(name);
  return z.segment(s.offset, s.length);
}

double ConicProgram::scalar(const Eigen::VectorXd& z, std::string_view name) const {
  const VarSpan& s = span(name);
  if (s.length != 1) throw Error(ErrorCode::InvalidModel, "span '" + s.name + "' is not scalar");
  return z(s.offset);
}

void ConicProgram::validate() const {
  Eigen::Index rows = 0;
  for (const auto& k : cones) {
    if (k.size < 1) throw Error(ErrorCode::InvalidModel, "cone size must be >= 1");
    rows += k.rows();
  }
  if (A.rows() != rows || b.size() != rows)
    throw Error(ErrorCode::DimensionMismatch, "constraint rows do not match cone sizes");
  if (A.cols() != c.size()) throw Error(ErrorCode::DimensionMismatch, "A columns != length of c");
  std::vector<int> cover(static_cast<std::size_t>(c.size()), 0);
  for (const auto& s : var_map) {
    if (s.offset < 0 || s.length < 0 || s.offset + s.length > c.size())
      throw Error(ErrorCode::InvalidModel, "span '" + s.name + "' out of range");
    for (Eigen::Index i = s.offset; i < s.offset + s.length; ++i) ++cover[std::size_t(i)];
  }
  if (!var_map.empty() && std::any_of(cover.begin(), cover.end(), [](int v) { return v != 1; }))
    throw Error(ErrorCode::InvalidModel, "variable spans must be disjoint and covering");
}

Eigen::Index ProgramBuilder::add_variables(const std::string& name, Eigen::Index length) {
  const Eigen::Index off = nvars_;
  spans_.push_back({name, off, length});
  nvars_ += length;
  return off;
}

Eigen::Index ProgramBuilder::add_cone(Cone cone) {
  const Eigen::Index row = nrows_;
  cones_.push_back(cone);
  nrows_ += cone.rows();
  return row;
}

void ProgramBuilder::set_cost(Eigen::Index col, double value) { cost_.emplace_back(col, value); }

void ProgramBuilder::add_coef(Eigen::Index row, Eigen::Index col, double value) {
  if (value != 0.0) entries_.push_back({row, col, value});
}

void ProgramBuilder::set_rhs(Eigen::Index row, double value) { rhs_.emplace_back(row, value); }

ConicProgram ProgramBuilder::build() const {
  ConicProgram prog;
  prog.c = Eigen::VectorXd::Zero(nvars_);
  prog.A = Eigen::MatrixXd::Zero(nrows_, nvars_);
  prog.b = Eigen::VectorXd::Zero(nrows_);
  for (const auto& [col, v] : cost_) prog.c(col) += v;
  for (const auto& e : entries_) prog.A(e.row, e.col) += e.value;
  for (const auto& [row, v] : rhs_) prog.b(row) = v;
  prog.cones = cones_;
  prog.var_map = spans_;
  prog.validate();
  return prog;
}

namespace {

struct SdpaEntry {
  Eigen::Index mat, block, i, j;
  double value;
};

std::string fmt17(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void write_sdpa(std::ostream& out, const ConicProgram& prog) {
  prog.validate();
  const Eigen::Index nvar = prog.num_vars();

  // Column 0 of `coeffs` is b (matrix F0 = -mat(b)), column j+1 is A column j.
  std::vector<SdpaEntry> entries;
  auto emit = [&](Eigen::Index block, Eigen::Index i, Eigen::Index j, Eigen::Index row,
                  double scale) {
    const double f0 = -scale * prog.b(row);
    if (f0 != 0.0) entries.push_back({0, block, i, j, f0});
    for (Eigen::Index col = 0; col < nvar; ++col) {
      const double v = -scale * prog.A(row, col);
      if (v != 0.0) entries.push_back({col + 1, block, i, j, v});
    }
  };

  Eigen::Index lp_size = 0;
  for (const auto& k : prog.cones) {
    if (k.kind == ConeKind::Nonnegative) lp_size += k.size;
    if (k.kind == ConeKind::Zero) lp_size += 2 * k.size;
  }

  std::vector<long long> block_struct;
  Eigen::Index lp_block = 0;
  if (lp_size > 0) {
    block_struct.push_back(-static_cast<long long>(lp_size));
    lp_block = 1;
  }
  Eigen::Index lp_pos = 0;
  Eigen::Index row = 0;
  for (const auto& k : prog.cones) {
    switch (k.kind) {
      case ConeKind::Zero:
        for (Eigen::Index r = 0; r < k.size; ++r) {
          ++lp_pos;
          emit(lp_block, lp_pos, lp_pos, row + r, 1.0);
          ++lp_pos;
          emit(lp_block, lp_pos, lp_pos, row + r, -1.0);
        }
        break;
      case ConeKind::Nonnegative:
        for (Eigen::Index r = 0; r < k.size; ++r) {
          ++lp_pos;
          emit(lp_block, lp_pos, lp_pos, row + r, 1.0);
        }
        break;
      case ConeKind::SecondOrder: {
        block_struct.push_back(static_cast<long long>(k.size));
        const auto blk = static_cast<Eigen::Index>(block_struct.size());
        for (Eigen::Index r = 0; r < k.size; ++r) emit(blk, r + 1, r + 1, row, 1.0);
        for (Eigen::Index r = 1; r < k.size; ++r) emit(blk, 1, r + 1, row + r, 1.0);
        break;
      }
      case ConeKind::PSD: {
        block_struct.push_back(static_cast<long long>(k.size));
        const auto blk = static_cast<Eigen::Index>(block_struct.size());
        Eigen::Index r = row;
        const double inv_r2 = 1.0 / std::sqrt(2.0);
        for (Eigen::Index j = 0; j < k.size; ++j) {
          emit(blk, j + 1, j + 1, r++, 1.0);
          for (Eigen::Index i = j + 1; i < k.size; ++i) emit(blk, j + 1, i + 1, r++, inv_r2);
        }
        break;
      }
    }
    row += k.rows();
  }

  std::stable_sort(entries.begin(), entries.end(), [](const SdpaEntry& x, const SdpaEntry& y) {
    return std::tie(x.mat, x.block, x.i, x.j) < std::tie(y.mat, y.block, y.i, y.j);
  });

  out << "\"gdro conic program: " << nvar << " variables, " << prog.num_rows() << " rows\n";
  out << nvar << '\n';
  out << block_struct.size() << '\n';
  for (std::size_t i = 0; i < block_struct.size(); ++i) out << (i ? " " : "") << block_struct[i];
  out << '\n';
  for (Eigen::Index i = 0; i < nvar; ++i) out << (i ? " " : "") << fmt17(prog.c(i));
  out << '\n';
  for (const auto& e : entries)
    out << e.mat << ' ' << e.block << ' ' << e.i << ' ' << e.j << ' ' << fmt17(e.value) << '\n';
}

}  // namespace gdro
