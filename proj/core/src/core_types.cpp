#include "ebdesign/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "ebdesign/csv.hpp"

namespace ebdesign {
namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorKind::invalid_argument, std::string(what) + ": non-finite entry");
  }
}

}  // namespace

const char* arm_name(Arm arm) { return arm == Arm::treated ? "t" : "c"; }

Design::Design(std::vector<int> treated, std::vector<int> control) {
  if (treated.size() != control.size())
    throw Error(ErrorKind::invalid_argument, "design: treated/control length mismatch");
  cells_.resize(2 * treated.size());
  for (std::size_t k = 0; k < treated.size(); ++k) {
    cells_[2 * k] = treated[k];
    cells_[2 * k + 1] = control[k];
  }
  for (int c : cells_)
    if (c < 0) throw Error(ErrorKind::invalid_argument, "design: negative count");
}

Design Design::from_cells(std::vector<int> cells) {
  if (cells.size() % 2 != 0) throw Error(ErrorKind::invalid_argument, "design: odd cell count");
  for (int c : cells)
    if (c < 0) throw Error(ErrorKind::invalid_argument, "design: negative count");
  Design d;
  d.cells_ = std::move(cells);
  return d;
}

int Design::total() const { return std::accumulate(cells_.begin(), cells_.end(), 0); }

int Design::min_count() const {
  return cells_.empty() ? 0 : *std::min_element(cells_.begin(), cells_.end());
}

Design Design::with_move(std::size_t from, std::size_t to) const {
  if (from == to || from >= cells_.size() || to >= cells_.size())
    throw Error(ErrorKind::invalid_argument, "design: invalid move");
  if (cells_[from] == 0) throw Error(ErrorKind::invalid_argument, "design: move from empty cell");
  Design d = *this;
  --d.cells_[from];
  ++d.cells_[to];
  return d;
}

std::ostream& operator<<(std::ostream& os, const Design& d) {
  os << '{';
  for (std::size_t k = 0; k < d.strata(); ++k) {
    if (k) os << ' ';
    os << '(' << d.treated(k) << ',' << d.control(k) << ')';
  }
  return os << '}';
}

StratumMoments::StratumMoments(std::vector<double> mu_t, std::vector<double> mu_c,
                               std::vector<double> var_t, std::vector<double> var_c)
    : mu_t_(std::move(mu_t)), mu_c_(std::move(mu_c)), var_t_(std::move(var_t)), var_c_(std::move(var_c)) {
  const std::size_t k = mu_t_.size();
  if (mu_c_.size() != k || var_t_.size() != k || var_c_.size() != k)
    throw Error(ErrorKind::invalid_argument, "moments: length mismatch");
  for (auto* v : {&mu_t_, &mu_c_}) {
    require_finite(*v, "moments");
    for (double x : *v)
      if (x < 0.0 || x > 1.0) throw Error(ErrorKind::invalid_argument, "moments: mean outside [0,1]");
  }
  for (auto* v : {&var_t_, &var_c_}) {
    require_finite(*v, "moments");
    for (double x : *v)
      if (x < 0.0 || x > 0.25 + 1e-12)
        throw Error(ErrorKind::invalid_argument, "moments: variance outside [0,0.25]");
  }
  binary_consistent_ = true;
  for (std::size_t i = 0; i < k; ++i) {
    if (var_t_[i] != mu_t_[i] * (1.0 - mu_t_[i]) || var_c_[i] != mu_c_[i] * (1.0 - mu_c_[i])) {
      binary_consistent_ = false;
      break;
    }
  }
}

StratumMoments StratumMoments::binary(std::vector<double> mu_t, std::vector<double> mu_c) {
  std::vector<double> vt(mu_t.size()), vc(mu_c.size());
  for (std::size_t i = 0; i < mu_t.size(); ++i) vt[i] = mu_t[i] * (1.0 - mu_t[i]);
  for (std::size_t i = 0; i < mu_c.size(); ++i) vc[i] = mu_c[i] * (1.0 - mu_c[i]);
  return StratumMoments(std::move(mu_t), std::move(mu_c), std::move(vt), std::move(vc));
}

EffectVector::EffectVector(std::vector<double> values) : values_(std::move(values)) {
  require_finite(values_, "effect vector");
}

DiagonalCovariance::DiagonalCovariance(std::vector<double> diag) : diag_(std::move(diag)) {
  if (diag_.empty()) throw Error(ErrorKind::invalid_argument, "covariance: empty");
  for (double x : diag_) {
    if (!std::isfinite(x)) throw Error(ErrorKind::degenerate_moments, "covariance: non-finite entry");
    if (!(x > 0.0)) throw Error(ErrorKind::degenerate_moments, "covariance: non-positive entry");
  }
}

double DiagonalCovariance::trace() const { return std::accumulate(diag_.begin(), diag_.end(), 0.0); }

const char* to_string(GuardrailMode m) {
  switch (m) {
    case GuardrailMode::off: return "off";
    case GuardrailMode::point: return "point";
    case GuardrailMode::robust: return "robust";
  }
  return "off";
}

const char* to_string(BaselineRule r) { return r == BaselineRule::equal ? "equal" : "neyman"; }

GuardrailMode parse_guardrail_mode(const std::string& s) {
  if (s == "off") return GuardrailMode::off;
  if (s == "point") return GuardrailMode::point;
  if (s == "robust") return GuardrailMode::robust;
  throw Error(ErrorKind::configuration, "unknown guardrail mode '" + s + "'");
}

BaselineRule parse_baseline_rule(const std::string& s) {
  if (s == "equal") return BaselineRule::equal;
  if (s == "neyman") return BaselineRule::neyman;
  throw Error(ErrorKind::configuration, "unknown baseline rule '" + s + "'");
}

void GuardrailConfig::validate() const {
  if (ss_min < 1) throw Error(ErrorKind::configuration, "ss_min must be >= 1");
  if (!(delta_d >= 1.0)) throw Error(ErrorKind::configuration, "delta_d must be >= 1");
}

DiagonalCovariance design_covariance(const Design& design, const StratumMoments& moments) {
  if (design.strata() != moments.strata())
    throw Error(ErrorKind::invalid_argument, "design_covariance: stratum count mismatch");
  std::vector<double> diag(design.strata());
  for (std::size_t k = 0; k < design.strata(); ++k) {
    if (design.treated(k) < 1 || design.control(k) < 1)
      throw Error(ErrorKind::degenerate_design,
                  "degenerate design: empty cell in stratum " + std::to_string(k + 1));
    diag[k] = moments.var_t(k) / design.treated(k) + moments.var_c(k) / design.control(k);
    if (!(diag[k] > 0.0))
      throw Error(ErrorKind::degenerate_moments,
                  "degenerate moments: zero variance in stratum " + std::to_string(k + 1));
  }
  return DiagonalCovariance(std::move(diag));
}

double l2_risk_of_unbiased(const DiagonalCovariance& sigma) {
  return sigma.trace() / static_cast<double>(sigma.size());
}

void write_design_csv(std::ostream& os, const Design& d) {
  os << "stratum,n_treated,n_control\n";
  for (std::size_t k = 0; k < d.strata(); ++k)
    os << (k + 1) << ',' << d.treated(k) << ',' << d.control(k) << '\n';
}

namespace {

// Rows must list strata 1..K exactly once, in any order.
std::vector<std::size_t> stratum_order(const csv::Table& t) {
  const std::size_t col = t.column("stratum");
  std::vector<std::size_t> pos(t.rows(), t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    long long s = t.integer(r, col);
    if (s < 1 || s > static_cast<long long>(t.rows()) || pos[s - 1] != t.rows())
      throw Error(ErrorKind::schema, "strata must be contiguous 1..K without repeats");
    pos[s - 1] = r;
  }
  return pos;
}

}  // namespace

Design read_design_csv(std::istream& is) {
  auto t = csv::Table::read(is);
  t.require({"stratum", "n_treated", "n_control"});
  auto order = stratum_order(t);
  std::vector<int> tr(t.rows()), co(t.rows());
  const auto ct = t.column("n_treated");
  const auto cc = t.column("n_control");
  for (std::size_t k = 0; k < t.rows(); ++k) {
    tr[k] = static_cast<int>(t.integer(order[k], ct));
    co[k] = static_cast<int>(t.integer(order[k], cc));
  }
  return Design(std::move(tr), std::move(co));
}

void write_moments_csv(std::ostream& os, const StratumMoments& m) {
  os << "stratum,mu_t,mu_c,var_t,var_c\n";
  for (std::size_t k = 0; k < m.strata(); ++k) {
    os << (k + 1) << ',' << csv::format_double(m.mu_t(k)) << ',' << csv::format_double(m.mu_c(k))
       << ',' << csv::format_double(m.var_t(k)) << ',' << csv::format_double(m.var_c(k)) << '\n';
  }
}

StratumMoments read_moments_csv(std::istream& is) {
  auto t = csv::Table::read(is);
  t.require({"stratum", "mu_t", "mu_c", "var_t", "var_c"});
  auto order = stratum_order(t);
  const std::size_t k = t.rows();
  std::vector<double> mt(k), mc(k), vt(k), vc(k);
  for (std::size_t i = 0; i < k; ++i) {
    mt[i] = t.number(order[i], t.column("mu_t"));
    mc[i] = t.number(order[i], t.column("mu_c"));
    vt[i] = t.number(order[i], t.column("var_t"));
    vc[i] = t.number(order[i], t.column("var_c"));
  }
  return StratumMoments(std::move(mt), std::move(mc), std::move(vt), std::move(vc));
}

}  // namespace ebdesign
