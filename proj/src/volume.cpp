#include "msseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "json.hpp"
#include "msseg/error.hpp"

namespace msseg {

GaussianKernel::GaussianKernel(double sigma, int radius) : sigma_(sigma), radius_(radius) {
  if (!(sigma > 0.0) || radius < 1) {
    throw Error(ErrorCode::InvalidConfig, "gaussian kernel needs sigma > 0 and radius >= 1");
  }
  taps_.resize(2 * radius + 1);
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    taps_[t + radius] = std::exp(-0.5 * t * t / (sigma * sigma));
    sum += taps_[t + radius];
  }
  for (double& w : taps_) w /= sum;
  // exact mirror symmetry regardless of summation rounding
  for (int t = 1; t <= radius; ++t) taps_[radius - t] = taps_[radius + t];
}

void validate(const Volume& v) {
  if (v.shape.d <= 0 || v.shape.h <= 0 || v.shape.w <= 0) {
    throw Error(ErrorCode::MalformedHeader, "non-positive shape " + v.shape.str());
  }
  if (v.data.size() != v.shape.size()) {
    throw Error(ErrorCode::MalformedHeader, "data length does not match shape " + v.shape.str());
  }
  for (double s : v.spacing) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::MalformedHeader, "spacing must be positive");
  }
  for (float x : v.data) {
    if (!std::isfinite(x)) throw Error(ErrorCode::DegenerateVolume, "volume contains non-finite values");
  }
}

namespace {

struct Header {
  Shape3 shape;
  Spacing3 spacing{1.0, 1.0, 1.0};
  std::string dtype;
};

template <typename T>
void to_little_endian(std::vector<T>& values) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (T& v : values) {
      auto* b = reinterpret_cast<unsigned char*>(&v);
      std::reverse(b, b + sizeof(T));
    }
  }
}

Header parse_header(const std::string& line, const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  Header h;
  try {
    const auto shape = j.at("shape").get<std::vector<int>>();
    if (shape.size() != 3 || shape[0] <= 0 || shape[1] <= 0 || shape[2] <= 0) {
      throw Error(ErrorCode::MalformedHeader, path.string() + ": shape must be three positive integers");
    }
    h.shape = {shape[0], shape[1], shape[2]};
    if (j.contains("spacing")) {
      const auto sp = j.at("spacing").get<std::vector<double>>();
      if (sp.size() != 3 || !(sp[0] > 0) || !(sp[1] > 0) || !(sp[2] > 0)) {
        throw Error(ErrorCode::MalformedHeader, path.string() + ": spacing must be three positive reals");
      }
      h.spacing = {sp[0], sp[1], sp[2]};
    }
    h.dtype = j.at("dtype").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  return h;
}

template <typename T>
Grid<T> read_grid(const std::filesystem::path& path, std::string_view dtype) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::MalformedHeader, path.string() + ": missing header line");
  const Header h = parse_header(line, path);
  if (h.dtype != dtype) {
    throw Error(ErrorCode::MalformedHeader,
                path.string() + ": dtype '" + h.dtype + "', expected '" + std::string(dtype) + "'");
  }
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = h.shape.size() * sizeof(T);
  if (payload.size() != expected) {
    throw Error(ErrorCode::PayloadSizeMismatch, path.string() + ": payload " + std::to_string(payload.size()) +
                                                    " bytes, expected " + std::to_string(expected));
  }
  Grid<T> g(h.shape, h.spacing);
  std::memcpy(g.data.data(), payload.data(), expected);
  to_little_endian(g.data);
  return g;
}

template <typename T>
void write_grid(const Grid<T>& g, const std::filesystem::path& path, std::string_view dtype) {
  nlohmann::json header = {{"shape", {g.shape.d, g.shape.h, g.shape.w}},
                           {"spacing", {g.spacing[0], g.spacing[1], g.spacing[2]}},
                           {"dtype", dtype}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << header.dump() << '\n';
  std::vector<T> payload = g.data;
  to_little_endian(payload);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(T)));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<double> to_double(const Volume& v) { return {v.data.begin(), v.data.end()}; }

Volume from_double(const std::vector<double>& values, Shape3 shape, Spacing3 spacing) {
  Volume out(shape, spacing);
  for (std::size_t i = 0; i < values.size(); ++i) out.data[i] = static_cast<float>(values[i]);
  return out;
}

}  // namespace

Volume load_volume(const std::filesystem::path& path) {
  Volume v = read_grid<float>(path, "f32");
  validate(v);
  return v;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  validate(v);
  write_grid(v, path, "f32");
}

LabelMap load_label_map(const std::filesystem::path& path) { return read_grid<std::uint8_t>(path, "u8"); }

void save_label_map(const LabelMap& m, const std::filesystem::path& path) {
  if (m.data.size() != m.shape.size()) throw Error(ErrorCode::MalformedHeader, "label map size mismatch");
  write_grid(m, path, "u8");
}

Mask brain_mask(const Volume& v) {
  Mask m(v.shape, v.spacing, 0);
  std::size_t count = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (std::fabs(v.data[i]) > 0.0f) {
      m.data[i] = 1;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "volume has no nonzero voxel");
  return m;
}

Volume normalize_volume(const Volume& v, const Mask& mask, double epsilon) {
  if (!(mask.shape == v.shape)) throw Error(ErrorCode::ShapeMismatch, "mask " + mask.shape.str() + " vs volume " + v.shape.str());
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (mask.data[i]) {
      sum += v.data[i];
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::EmptyMask, "normalization mask is empty");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (mask.data[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
  }
  const double stddev = std::sqrt(ss / static_cast<double>(n));
  if (stddev <= epsilon) throw Error(ErrorCode::DegenerateVolume, "masked standard deviation is zero");
  Volume out(v.shape, v.spacing, 0.0f);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (mask.data[i]) out.data[i] = static_cast<float>((v.data[i] - mean) / stddev);
  }
  return out;
}

Volume gaussian_smooth(const Volume& v, const GaussianKernel& k) {
  const auto in = to_double(v);
  std::vector<double> out(in.size());
  smooth3d<double>(in, out, v.shape, k);
  return from_double(out, v.shape, v.spacing);
}

Volume downsample2(const Volume& v, const GaussianKernel& k) {
  if (v.shape.d < 2 || v.shape.h < 2 || v.shape.w < 2) {
    throw Error(ErrorCode::VolumeTooSmall, "downsample2 needs every axis >= 2, got " + v.shape.str());
  }
  const auto in = to_double(v);
  std::vector<double> smoothed(in.size());
  smooth3d<double>(in, smoothed, v.shape, k);
  const auto out = decimate2<double>(smoothed, v.shape);
  return from_double(out, half_shape(v.shape), {v.spacing[0] * 2, v.spacing[1] * 2, v.spacing[2] * 2});
}

Volume upsample_nn(const Volume& v) {
  const Shape3 s{v.shape.d * 2, v.shape.h * 2, v.shape.w * 2};
  Volume out(s, {v.spacing[0] / 2, v.spacing[1] / 2, v.spacing[2] / 2});
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) out.at(z, y, x) = v.at(z / 2, y / 2, x / 2);
  return out;
}

}  // namespace msseg
