#include "msseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "json_reader.hpp"
#include "msseg/error.hpp"

namespace msseg {

namespace {

constexpr const char* kFormat = "msseg-checkpoint";

template <typename Real>
constexpr const char* dtype_name() {
  return sizeof(Real) == 8 ? "f64" : "f32";
}

template <typename Real>
void append(std::string& payload, const std::vector<Real>& values) {
  const auto* bytes = reinterpret_cast<const char*>(values.data());
  payload.append(bytes, values.size() * sizeof(Real));
}

template <typename Real>
class PayloadCursor {
 public:
  PayloadCursor(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  void read(std::vector<Real>& out) {
    const std::size_t n = out.size() * sizeof(Real);
    if (at_ + n > bytes_.size()) throw Error(ErrorCode::IoFailure, path_.string() + ": truncated payload");
    std::memcpy(out.data(), bytes_.data() + at_, n);
    at_ += n;
  }

  void finish() const {
    if (at_ != bytes_.size()) throw Error(ErrorCode::IoFailure, path_.string() + ": trailing bytes in payload");
  }

 private:
  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t at_ = 0;
};

nlohmann::json read_manifest(std::ifstream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::VersionMismatch, path.string() + ": empty checkpoint");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::VersionMismatch, path.string() + ": unreadable manifest");
  }
  if (!m.is_object() || m.value("format", "") != kFormat) {
    throw Error(ErrorCode::VersionMismatch, path.string() + ": not a checkpoint");
  }
  if (m.value("version", -1) != kCheckpointVersion) {
    throw Error(ErrorCode::VersionMismatch, path.string() + ": unsupported checkpoint version");
  }
  return m;
}

std::ifstream open_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  return in;
}

}  // namespace

nlohmann::json to_json(const NetworkConfig& cfg) {
  return {{"scales", cfg.scales},
          {"base_channels", cfg.base_channels},
          {"blocks_per_scale", cfg.blocks_per_scale},
          {"num_classes", cfg.num_classes},
          {"num_modalities", cfg.num_modalities},
          {"patch_size", cfg.patch_size},
          {"downsample_sigma", cfg.downsample_sigma},
          {"downsample_radius", cfg.downsample_radius}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j, const std::string& context) {
  NetworkConfig cfg;
  detail::ObjectReader r(j, context);
  r.get("scales", cfg.scales);
  r.get("base_channels", cfg.base_channels);
  r.get("blocks_per_scale", cfg.blocks_per_scale);
  r.get("num_classes", cfg.num_classes);
  r.get("num_modalities", cfg.num_modalities);
  r.get("patch_size", cfg.patch_size);
  r.get("downsample_sigma", cfg.downsample_sigma);
  r.get("downsample_radius", cfg.downsample_radius);
  r.finish();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidConfig, context + ": " + e.what());
  }
  return cfg;
}

template <typename Real>
void save_checkpoint(const Network<Real>& net, const std::filesystem::path& path, const TrainingState<Real>* state) {
  nlohmann::json params = nlohmann::json::array();
  std::string payload;
  const auto list = net.parameters();
  for (const auto* p : list) {
    const Shape5 s = p->value.shape;
    params.push_back({{"name", p->name}, {"shape", {s.n, s.c, s.d, s.h, s.w}}});
    append(payload, p->value.data);
  }
  nlohmann::json bns = nlohmann::json::array();
  for (const auto* b : net.batchnorms()) {
    bns.push_back({{"name", b->gamma.name.substr(0, b->gamma.name.rfind('.'))},
                   {"channels", b->channels()},
                   {"epsilon", static_cast<double>(b->epsilon)},
                   {"sample_count", b->sample_count}});
    append(payload, b->running_mean);
    append(payload, b->running_std);
  }
  nlohmann::json manifest = {{"format", kFormat},
                             {"version", kCheckpointVersion},
                             {"dtype", dtype_name<Real>()},
                             {"config", to_json(net.config())},
                             {"label_remap", net.label_remap.external_ids()},
                             {"modalities", net.modality_names},
                             {"parameters", params},
                             {"batchnorms", bns},
                             {"training", nullptr}};
  if (state) {
    if (state->velocity.size() != list.size()) throw Error(ErrorCode::ShapeMismatch, "velocity/parameter count mismatch");
    manifest["training"] = {{"iteration", state->iteration},
                            {"sampler_rng", state->sampler_rng},
                            {"noise_rng", state->noise_rng}};
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!(state->velocity[i].shape == list[i]->value.shape)) {
        throw Error(ErrorCode::ShapeMismatch, "velocity shape for " + list[i]->name);
      }
      append(payload, state->velocity[i].data);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << manifest.dump() << '\n';
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

template <typename Real>
Network<Real> load_checkpoint(const std::filesystem::path& path, TrainingState<Real>* state) {
  std::ifstream in = open_checkpoint(path);
  const nlohmann::json m = read_manifest(in, path);
  const std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Network<Real> net;
  try {
    if (m.at("dtype").get<std::string>() != dtype_name<Real>()) {
      throw Error(ErrorCode::ConfigMismatch, path.string() + ": dtype " + m.at("dtype").get<std::string>() +
                                                 ", expected " + dtype_name<Real>());
    }
    net = Network<Real>(network_config_from_json(m.at("config"), path.string() + ":config"));
    net.label_remap = LabelRemap(m.at("label_remap").get<std::vector<int>>());
    net.modality_names = m.at("modalities").get<std::vector<std::string>>();
    if (net.label_remap.classes() != net.config().num_classes ||
        static_cast<int>(net.modality_names.size()) != net.config().num_modalities) {
      throw Error(ErrorCode::ConfigMismatch, path.string() + ": label remap or modality list disagrees with config");
    }

    PayloadCursor<Real> cursor(payload, path);
    const auto params = net.parameters();
    const auto& listed = m.at("parameters");
    if (listed.size() != params.size()) throw Error(ErrorCode::ConfigMismatch, path.string() + ": parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto shape = listed[i].at("shape").get<std::vector<int>>();
      const Shape5 s = params[i]->value.shape;
      if (listed[i].at("name").get<std::string>() != params[i]->name || shape != std::vector<int>{s.n, s.c, s.d, s.h, s.w}) {
        throw Error(ErrorCode::ConfigMismatch, path.string() + ": parameter " + params[i]->name);
      }
      cursor.read(params[i]->value.data);
    }
    const auto bns = net.batchnorms();
    const auto& listed_bn = m.at("batchnorms");
    if (listed_bn.size() != bns.size()) throw Error(ErrorCode::ConfigMismatch, path.string() + ": batch norm count");
    for (std::size_t i = 0; i < bns.size(); ++i) {
      if (listed_bn[i].at("channels").get<int>() != bns[i]->channels()) {
        throw Error(ErrorCode::ConfigMismatch, path.string() + ": batch norm channels");
      }
      bns[i]->epsilon = static_cast<Real>(listed_bn[i].at("epsilon").get<double>());
      bns[i]->sample_count = listed_bn[i].at("sample_count").get<std::int64_t>();
      cursor.read(bns[i]->running_mean);
      cursor.read(bns[i]->running_std);
    }
    const auto& training = m.at("training");
    if (!training.is_null()) {
      TrainingState<Real> st;
      st.iteration = training.at("iteration").get<std::int64_t>();
      st.sampler_rng = training.at("sampler_rng").get<std::string>();
      st.noise_rng = training.at("noise_rng").get<std::string>();
      for (const auto* p : params) {
        Tensor<Real> v(p->value.shape);
        cursor.read(v.data);
        st.velocity.push_back(std::move(v));
      }
      if (state) *state = std::move(st);
    } else if (state) {
      *state = TrainingState<Real>{};
    }
    cursor.finish();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::VersionMismatch, path.string() + ": manifest field error: " + e.what());
  }
  return net;
}

std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::ifstream in = open_checkpoint(path);
  const nlohmann::json m = read_manifest(in, path);
  return m.value("dtype", "");
}

template void save_checkpoint<float>(const Network<float>&, const std::filesystem::path&, const TrainingState<float>*);
template void save_checkpoint<double>(const Network<double>&, const std::filesystem::path&,
                                      const TrainingState<double>*);
template Network<float> load_checkpoint<float>(const std::filesystem::path&, TrainingState<float>*);
template Network<double> load_checkpoint<double>(const std::filesystem::path&, TrainingState<double>*);

}  // namespace msseg
