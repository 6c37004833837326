#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dentoforge/errors.hpp"
#include "dentoforge/layout_model.hpp"

namespace dentoforge::diffusion {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'P'};

// Trained layout model plus the optimizer state needed for exact resume.
struct LayoutModel {
  DenoiserConfig config;
  std::string schedule_kind = "cosine";
  LayoutNormalizer normalizer;
  std::uint64_t seed = 0;
  GraphDenoiser<float> denoiser;

  LayoutModel(const DenoiserConfig& cfg, std::string kind, std::uint64_t sd)
      : config(cfg), schedule_kind(std::move(kind)), seed(sd),
        denoiser(cfg, sd) {}
};

struct TrainerState {
  int epoch = 0;
  long long adam_step = 0;
  std::vector<autodiff::Mat<float>> adam_m;
  std::vector<autodiff::Mat<float>> adam_v;
};

namespace detail {

inline void append_tensor(std::vector<float>& payload, nlohmann::json& manifest,
                          const std::string& name,
                          const autodiff::Mat<float>& m) {
  manifest.push_back({{"name", name},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"offset", payload.size()}});
  payload.insert(payload.end(), m.data(), m.data() + m.size());
}

inline autodiff::Mat<float> read_tensor(const std::vector<float>& payload,
                                        const nlohmann::json& entry) {
  const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
  const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
  const size_t offset = entry.at("offset").get<size_t>();
  if (offset + static_cast<size_t>(rows * cols) > payload.size())
    throw ValidationError("checkpoint payload truncated at tensor " +
                          entry.at("name").get<std::string>());
  autodiff::Mat<float> m(rows, cols);
  std::memcpy(m.data(), payload.data() + offset,
              static_cast<size_t>(rows * cols) * sizeof(float));
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const LayoutModel& model,
                            const TrainerState* trainer = nullptr) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = {{"blocks", model.config.blocks},
                      {"heads", model.config.heads},
                      {"width", model.config.width},
                      {"T", model.config.T},
                      {"dropout", model.config.dropout},
                      {"category_embed_dim", model.config.category_embed_dim},
                      {"feature_dim", model.config.feature_dim},
                      {"time_embed_dim", model.config.time_embed_dim}};
  header["schedule_kind"] = model.schedule_kind;
  header["d_t"] = kTextTokens * kTextTokenDim;
  header["d_f"] = model.config.feature_dim;
  header["seed"] = model.seed;
  std::vector<double> mean(8), stdv(8);
  for (int i = 0; i < 8; ++i) {
    mean[static_cast<size_t>(i)] = model.normalizer.mean[i];
    stdv[static_cast<size_t>(i)] = model.normalizer.std[i];
  }
  header["normalizer"] = {{"mean", mean}, {"std", stdv}};

  std::vector<float> payload;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& e : model.denoiser.params().entries)
    detail::append_tensor(payload, manifest, e.name, e.value);
  if (trainer) {
    header["trainer"] = {{"epoch", trainer->epoch},
                         {"adam_step", trainer->adam_step}};
    for (size_t i = 0; i < trainer->adam_m.size(); ++i)
      detail::append_tensor(payload, manifest, "adam_m." + std::to_string(i),
                            trainer->adam_m[i]);
    for (size_t i = 0; i < trainer->adam_v.size(); ++i)
      detail::append_tensor(payload, manifest, "adam_v." + std::to_string(i),
                            trainer->adam_v[i]);
  }
  header["tensors"] = std::move(manifest);

  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), 4);
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline std::unique_ptr<LayoutModel> load_checkpoint(
    const std::filesystem::path& path, TrainerState* trainer = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());

  char magic[4];
  std::uint32_t hlen = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&hlen), 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw ValidationError("not a dentoforge checkpoint: " + path.string());
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw ValidationError("checkpoint header truncated: " + path.string());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(htext);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw ValidationError("unsupported checkpoint format version " +
                          std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  DenoiserConfig cfg;
  const auto& jc = header.at("config");
  cfg.blocks = jc.at("blocks").get<int>();
  cfg.heads = jc.at("heads").get<int>();
  cfg.width = jc.at("width").get<int>();
  cfg.T = jc.at("T").get<int>();
  cfg.dropout = jc.at("dropout").get<double>();
  cfg.category_embed_dim = jc.at("category_embed_dim").get<int>();
  cfg.feature_dim = jc.at("feature_dim").get<int>();
  cfg.time_embed_dim = jc.at("time_embed_dim").get<int>();

  auto model = std::make_unique<LayoutModel>(
      cfg, header.at("schedule_kind").get<std::string>(),
      header.value("seed", std::uint64_t{0}));
  const auto mean = header.at("normalizer").at("mean").get<std::vector<double>>();
  const auto stdv = header.at("normalizer").at("std").get<std::vector<double>>();
  for (int i = 0; i < 8; ++i) {
    model->normalizer.mean[i] = mean.at(static_cast<size_t>(i));
    model->normalizer.std[i] = stdv.at(static_cast<size_t>(i));
  }

  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  if (bytes.size() % sizeof(float) != 0)
    throw ValidationError("checkpoint payload has odd length: " + path.string());
  std::vector<float> floats(bytes.size() / sizeof(float));
  std::memcpy(floats.data(), bytes.data(), bytes.size());

  std::unordered_map<std::string, nlohmann::json> by_name;
  for (const auto& t : header.at("tensors")) by_name[t.at("name")] = t;

  for (auto& e : model->denoiser.params().entries) {
    auto it = by_name.find(e.name);
    if (it == by_name.end())
      throw ValidationError("checkpoint missing tensor " + e.name);
    autodiff::Mat<float> m = detail::read_tensor(floats, it->second);
    if (m.rows() != e.value.rows() || m.cols() != e.value.cols())
      throw ValidationError("checkpoint tensor " + e.name + " has wrong shape");
    e.value = std::move(m);
  }

  if (trainer && header.contains("trainer")) {
    trainer->epoch = header["trainer"].at("epoch").get<int>();
    trainer->adam_step = header["trainer"].at("adam_step").get<long long>();
    trainer->adam_m.clear();
    trainer->adam_v.clear();
    const size_t n = model->denoiser.params().entries.size();
    for (size_t i = 0; i < n; ++i) {
      auto it = by_name.find("adam_m." + std::to_string(i));
      if (it == by_name.end()) break;
      trainer->adam_m.push_back(detail::read_tensor(floats, it->second));
    }
    for (size_t i = 0; i < n; ++i) {
      auto it = by_name.find("adam_v." + std::to_string(i));
      if (it == by_name.end()) break;
      trainer->adam_v.push_back(detail::read_tensor(floats, it->second));
    }
  }
  return model;
}

struct TrainOptions {
  int epochs = 400;
  int batch_size = 16;
  double lr = 2e-3;
  int min_mask = 1;
  int max_mask = 4;
  std::uint64_t seed = 0;
};

struct TrainResult {
  std::vector<double> epoch_losses;  // indexed from the first epoch run
};

// Full training loop over complete jaws; masks are redrawn every epoch so
// each sample serves many conditioning patterns. Deterministic per seed and
// exactly resumable from (model, state).
inline TrainResult train_layout_model(LayoutModel& model, TrainerState& state,
                                      const std::vector<JawGraph>& graphs,
                                      const TrainOptions& opts) {
  if (graphs.empty()) throw ValidationError("training set is empty");
  const NoiseSchedule sched = make_schedule(model.config.T, model.schedule_kind);

  AdamOptimizer<float> adam(model.denoiser.params(), opts.lr);
  if (!state.adam_m.empty()) {
    adam.first_moments() = state.adam_m;
    adam.second_moments() = state.adam_v;
    adam.step_count() = state.adam_step;
  }

  TrainResult result;
  for (int epoch = state.epoch; epoch < opts.epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    std::vector<int> order(graphs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = Rng::keyed({opts.seed, 0x5EFFull,
                                  static_cast<std::uint64_t>(epoch)});
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1],
                order[static_cast<size_t>(shuffle_rng.uniform_int(
                    0, static_cast<std::int64_t>(i) - 1))]);

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(opts.batch_size)) {
      std::vector<TrainPair> pairs;
      for (size_t i = start;
           i < std::min(order.size(), start + static_cast<size_t>(opts.batch_size));
           ++i) {
        const JawGraph& g = graphs[static_cast<size_t>(order[i])];
        Rng mask_rng = Rng::keyed({opts.seed, 0x3A5Cull,
                                   static_cast<std::uint64_t>(epoch),
                                   static_cast<std::uint64_t>(order[i])});
        const int n_mask = static_cast<int>(
            mask_rng.uniform_int(opts.min_mask, opts.max_mask));
        std::vector<int> candidates;
        for (const auto& node : g.nodes)
          if (node.layout) candidates.push_back(node.tooth_id);
        std::vector<int> mask;
        for (int m = 0; m < n_mask && !candidates.empty(); ++m) {
          const size_t pick = static_cast<size_t>(mask_rng.uniform_int(
              0, static_cast<std::int64_t>(candidates.size()) - 1));
          mask.push_back(candidates[pick]);
          candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        pairs.push_back({&g, std::move(mask),
                         static_cast<std::uint64_t>(order[i])});
      }
      const std::uint64_t key = Rng::hash_keys(
          {opts.seed, 0xBA7C4ull, static_cast<std::uint64_t>(epoch),
           static_cast<std::uint64_t>(batches)});
      model.denoiser.params().zero_grads();
      loss_sum += train_step(model.denoiser, pairs, sched, model.normalizer, key);
      adam.step();
      ++batches;
    }
    result.epoch_losses.push_back(loss_sum / std::max(1, batches));
    state.epoch = epoch + 1;
  }

  state.adam_m = adam.first_moments();
  state.adam_v = adam.second_moments();
  state.adam_step = adam.step_count();
  return result;
}

}  // namespace dentoforge::diffusion
