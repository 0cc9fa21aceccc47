#include "msseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msseg/error.hpp"

namespace msseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_shape(const Mask& a, const Mask& b) {
  if (!(a.shape == b.shape)) throw Error(ErrorCode::ShapeMismatch, "mask shapes " + a.shape.str() + " vs " + b.shape.str());
}

// Lower envelope of parabolas w^2 (q - p)^2 + f[p] over one line, in place.
void distance_1d(double* f, std::ptrdiff_t stride, int n, double w, std::vector<double>& line,
                 std::vector<int>& v, std::vector<double>& z) {
  for (int i = 0; i < n; ++i) line[i] = f[i * stride];
  const double w2 = w * w;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (line[q] == kInf) continue;
    while (k >= 0) {
      const int p = v[k];
      const double s = ((line[q] + w2 * q * q) - (line[p] + w2 * p * p)) / (2.0 * w2 * (q - p));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = k == 0 ? -kInf : ((line[q] + w2 * q * q) - (line[v[k - 1]] + w2 * v[k - 1] * v[k - 1])) /
                                (2.0 * w2 * (q - v[k - 1]));
    z[k + 1] = kInf;
  }
  if (k < 0) return;  // no sites on this line: stays +inf
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double d = q - v[j];
    f[q * stride] = w2 * d * d + line[v[j]];
  }
}

std::optional<double> ratio(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

const char* const kColumns[] = {"Dice", "Sensitivity", "Specificity", "Hausdorff95"};

std::optional<double> column(const RegionMetrics& m, int c) {
  switch (c) {
    case 0: return m.dice;
    case 1: return m.sensitivity;
    case 2: return m.specificity;
    default: return m.hd95;
  }
}

}  // namespace

const char* region_name(Region r) {
  switch (r) {
    case Region::ET: return "ET";
    case Region::WT: return "WT";
    case Region::TC: return "TC";
  }
  return "?";
}

std::array<RegionMask, 3> region_masks(const LabelMap& lm) {
  std::array<RegionMask, 3> out{RegionMask{Region::ET, Mask(lm.shape, lm.spacing)},
                                RegionMask{Region::WT, Mask(lm.shape, lm.spacing)},
                                RegionMask{Region::TC, Mask(lm.shape, lm.spacing)}};
  for (std::size_t i = 0; i < lm.data.size(); ++i) {
    const int l = lm.data[i];
    if (l > 3) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(l) + " is not an internal class id");
    out[0].bits.data[i] = l == 3;
    out[1].bits.data[i] = l != 0;
    out[2].bits.data[i] = l == 1 || l == 3;
  }
  return out;
}

double dice_score(const Mask& a, const Mask& b) {
  require_same_shape(a, b);
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool x = a.data[i] != 0, y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Rates sensitivity_specificity(const Mask& pred, const Mask& truth) {
  require_same_shape(pred, truth);
  std::int64_t tp = 0, fn = 0, fp = 0, tn = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    tp += p && t;
    fn += !p && t;
    fp += p && !t;
    tn += !p && !t;
  }
  return {ratio(tp, tp + fn), ratio(tn, tn + fp)};
}

Mask boundary(const Mask& m) {
  Mask out(m.shape, m.spacing);
  const Shape3 s = m.shape;
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool edge = z == 0 || y == 0 || x == 0 || z == s.d - 1 || y == s.h - 1 || x == s.w - 1;
        out.at(z, y, x) = edge || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) ||
                          !m.at(z, y + 1, x) || !m.at(z, y, x - 1) || !m.at(z, y, x + 1);
      }
  return out;
}

std::vector<double> squared_distance_map(const Mask& sites, Spacing3 spacing) {
  const Shape3 s = sites.shape;
  std::vector<double> f(sites.data.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = sites.data[i] ? 0.0 : kInf;
  const int longest = std::max({s.d, s.h, s.w});
  std::vector<double> line(longest), z(longest + 1);
  std::vector<int> v(longest);
  const std::ptrdiff_t sw = 1, sh = s.w, sd = static_cast<std::ptrdiff_t>(s.h) * s.w;
  for (int a = 0; a < s.d; ++a)
    for (int b = 0; b < s.h; ++b) distance_1d(&f[a * sd + b * sh], sw, s.w, spacing[2], line, v, z);
  for (int a = 0; a < s.d; ++a)
    for (int c = 0; c < s.w; ++c) distance_1d(&f[a * sd + c], sh, s.h, spacing[1], line, v, z);
  for (int b = 0; b < s.h; ++b)
    for (int c = 0; c < s.w; ++c) distance_1d(&f[b * sh + c], sd, s.d, spacing[0], line, v, z);
  return f;
}

std::vector<double> boundary_distances_sq(const Mask& a, const Mask& b, Spacing3 spacing) {
  require_same_shape(a, b);
  const Mask ba = boundary(a);
  const std::vector<double> dist = squared_distance_map(boundary(b), spacing);
  std::vector<double> out;
  for (std::size_t i = 0; i < ba.data.size(); ++i) {
    if (ba.data[i]) out.push_back(dist[i]);
  }
  return out;
}

double percentile_inclusive(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::EmptyMask, "percentile of no values");
  std::sort(values.begin(), values.end());
  const double pos = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double t = pos - static_cast<double>(lo);
  return values[lo] + t * (values[hi] - values[lo]);
}

double hd95(const Mask& a, const Mask& b, Spacing3 spacing) {
  require_same_shape(a, b);
  auto any = [](const Mask& m) { return std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; }); };
  if (!any(a) || !any(b)) throw Error(ErrorCode::EmptyMask, "hd95 needs two nonempty masks");
  auto directed = [&](const Mask& x, const Mask& y) {
    std::vector<double> d = boundary_distances_sq(x, y, spacing);
    for (double& v : d) v = std::sqrt(v);
    return percentile_inclusive(std::move(d), 0.95);
  };
  return std::max(directed(a, b), directed(b, a));
}

MetricsReport evaluate_case(const LabelMap& pred, const LabelMap& truth, Spacing3 spacing, const std::string& case_id) {
  if (!(pred.shape == truth.shape)) {
    throw Error(ErrorCode::ShapeMismatch, "prediction " + pred.shape.str() + " vs truth " + truth.shape.str());
  }
  const auto p = region_masks(pred);
  const auto t = region_masks(truth);
  MetricsReport report;
  report.case_id = case_id;
  for (int r = 0; r < 3; ++r) {
    RegionMetrics& m = report.regions[r];
    m.dice = dice_score(p[r].bits, t[r].bits);
    const Rates rates = sensitivity_specificity(p[r].bits, t[r].bits);
    m.sensitivity = rates.sensitivity;
    m.specificity = rates.specificity;
    try {
      m.hd95 = hd95(p[r].bits, t[r].bits, spacing);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyMask) throw;
    }
  }
  return report;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["case"] = case_id;
  for (int c = 0; c < 4; ++c)
    for (Region r : kRegions) j[std::string(kColumns[c]) + " " + region_name(r)] = optional_json(column((*this)[r], c));
  return j;
}

nlohmann::ordered_json aggregate_reports(std::span<const MetricsReport> reports) {
  nlohmann::ordered_json j;
  j["cases"] = reports.size();
  for (int c = 0; c < 4; ++c)
    for (Region r : kRegions) {
      std::vector<double> values;
      for (const auto& rep : reports) {
        if (auto v = column(rep[r], c)) values.push_back(*v);
      }
      nlohmann::ordered_json cell;
      cell["count"] = values.size();
      if (values.empty()) {
        cell["mean"] = nullptr;
        cell["median"] = nullptr;
      } else {
        double total = 0.0;
        for (double v : values) total += v;
        cell["mean"] = total / static_cast<double>(values.size());
        cell["median"] = percentile_inclusive(values, 0.5);
      }
      j[std::string(kColumns[c]) + " " + region_name(r)] = cell;
    }
  return j;
}

}  // namespace msseg
