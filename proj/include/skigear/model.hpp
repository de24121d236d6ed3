#pragma once

// The three stroke classifiers and their JSON model file.
//
//   LSTM : lstm(126, full sequence) -> flatten -> dense 140 relu -> dense 4 softmax
//   BLSTM: lstm(64) forward ++ lstm(64) backward -> flatten -> dense 140 relu -> dense 4 softmax
//   CNN  : conv(52,k5) relu -> maxpool 5 -> conv(52,k5) relu -> global maxpool -> dense 140 relu -> dense 4

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "skigear/autodiff.hpp"
#include "skigear/csv.hpp"
#include "skigear/preprocess.hpp"

namespace skigear {

enum class ModelKind { LSTM, BLSTM, CNN };

constexpr std::string_view kind_name(ModelKind k) noexcept {
  switch (k) {
    case ModelKind::LSTM: return "lstm";
    case ModelKind::BLSTM: return "blstm";
    case ModelKind::CNN: return "cnn";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "lstm") return ModelKind::LSTM;
  if (lower == "blstm") return ModelKind::BLSTM;
  if (lower == "cnn") return ModelKind::CNN;
  throw contract_error("unknown model kind '" + std::string(s) + "' (expected lstm, blstm or cnn)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::LSTM;
  std::size_t recurrent_units = 126;  // per direction
  std::size_t dense1_units = 140;
  std::size_t output_units = 4;
  std::size_t cnn_filters = 52;
  std::size_t kernel_size = 5;
  std::size_t pool_size = 5;
  std::size_t conv_stride = 1;
  std::size_t sequence_length = 140;
  std::size_t input_channels = channel_count;
  std::uint64_t seed = 0;

  /// Architecture defaults for `kind`: 126 LSTM units, 64 per BLSTM direction.
  static ModelConfig defaults(ModelKind kind, std::uint64_t seed = 0) {
    ModelConfig c;
    c.kind = kind;
    c.recurrent_units = kind == ModelKind::BLSTM ? 64 : 126;
    c.seed = seed;
    return c;
  }

  void validate() const {
    if (output_units != gear_count) throw contract_error("output_units must be 4");
    if (!recurrent_units || !dense1_units || !cnn_filters || !kernel_size || !pool_size || !conv_stride ||
        !sequence_length || !input_channels)
      throw contract_error("model sizes must be positive");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Shapes of the CNN feature maps for a config: conv1, pool, conv2 lengths.
struct CnnShapes {
  std::size_t conv1, pool, conv2;
};

inline CnnShapes cnn_shapes(const ModelConfig& c) {
  const std::size_t conv1 = conv1d_output_length(c.sequence_length, c.kernel_size, c.conv_stride);
  const std::size_t pool = conv1 / c.pool_size;
  const std::size_t conv2 = conv1d_output_length(pool, c.kernel_size, c.conv_stride);
  return {conv1, pool, conv2};
}

/// LSTM cell parameter count: 4 (h (d + h) + h).
constexpr std::size_t lstm_cell_parameters(std::size_t units, std::size_t input) {
  return 4 * (units * (input + units) + units);
}

struct Model {
  static constexpr int format_version = 1;

  ModelConfig config;
  ParameterStore params;
  Normalizer norm = Normalizer::identity();

  /// Parameter count of the recurrent cell(s) only; zero for CNN.
  std::size_t recurrent_parameter_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params.name(i).starts_with("lstm")) n += params.value(i).size();
    return n;
  }
};

namespace detail {

inline Tensor glorot_uniform(shape_t shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline void add_lstm(ParameterStore& p, const std::string& prefix, std::size_t in, std::size_t units,
                     std::mt19937_64& rng) {
  p.add(prefix + "/kernel", glorot_uniform({in, 4 * units}, in, 4 * units, rng));
  p.add(prefix + "/recurrent_kernel", glorot_uniform({units, 4 * units}, units, 4 * units, rng));
  Tensor bias({4 * units});
  for (std::size_t j = units; j < 2 * units; ++j) bias[j] = 1.0;  // forget gate
  p.add(prefix + "/bias", std::move(bias));
}

inline void add_dense(ParameterStore& p, const std::string& prefix, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
  p.add(prefix + "/kernel", glorot_uniform({in, out}, in, out, rng));
  p.add(prefix + "/bias", Tensor({out}));
}

inline void add_conv(ParameterStore& p, const std::string& prefix, std::size_t in, std::size_t filters,
                     std::size_t kernel, std::mt19937_64& rng) {
  p.add(prefix + "/kernel", glorot_uniform({filters, kernel, in}, kernel * in, kernel * filters, rng));
  p.add(prefix + "/bias", Tensor({filters}));
}

}  // namespace detail

inline Model init_model(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.input_channels;
  const std::size_t h = config.recurrent_units;
  switch (config.kind) {
    case ModelKind::LSTM:
      detail::add_lstm(m.params, "lstm", d, h, rng);
      detail::add_dense(m.params, "dense1", config.sequence_length * h, config.dense1_units, rng);
      break;
    case ModelKind::BLSTM:
      detail::add_lstm(m.params, "lstm_forward", d, h, rng);
      detail::add_lstm(m.params, "lstm_backward", d, h, rng);
      detail::add_dense(m.params, "dense1", config.sequence_length * 2 * h, config.dense1_units, rng);
      break;
    case ModelKind::CNN:
      cnn_shapes(config);  // rejects sequences too short for the conv stack
      detail::add_conv(m.params, "conv1", d, config.cnn_filters, config.kernel_size, rng);
      detail::add_conv(m.params, "conv2", config.cnn_filters, config.cnn_filters, config.kernel_size, rng);
      detail::add_dense(m.params, "dense1", config.cnn_filters, config.dense1_units, rng);
      break;
  }
  detail::add_dense(m.params, "dense2", config.dense1_units, config.output_units, rng);
  return m;
}

/// Records the network on `tape` for a batch [B x T x C] and returns the logits [B x 4].
inline Var model_logits(GradientTape& tape, const Model& m, Var input) {
  const auto& c = m.config;
  const auto& p = m.params;
  auto param = [&](const char* name) { return tape.parameter(p, p.at(name)); };
  const Tensor& x = tape.value(input);
  if (x.rank() != 3 || x.dim(1) != c.sequence_length || x.dim(2) != c.input_channels)
    throw dimension_error("model expects input [B x " + std::to_string(c.sequence_length) + " x " +
                          std::to_string(c.input_channels) + "], got " + to_string(x.shape()));
  const std::size_t batch = x.dim(0);
  Var features{};
  switch (c.kind) {
    case ModelKind::LSTM: {
      const Var seq = ad::lstm(tape, input, param("lstm/kernel"), param("lstm/recurrent_kernel"), param("lstm/bias"));
      features = ad::reshape(tape, seq, {batch, c.sequence_length * c.recurrent_units});
      break;
    }
    case ModelKind::BLSTM: {
      const Var fw = ad::lstm(tape, input, param("lstm_forward/kernel"), param("lstm_forward/recurrent_kernel"),
                              param("lstm_forward/bias"), false);
      const Var bw = ad::lstm(tape, input, param("lstm_backward/kernel"), param("lstm_backward/recurrent_kernel"),
                              param("lstm_backward/bias"), true);
      features = ad::reshape(tape, ad::concat_last(tape, fw, bw), {batch, c.sequence_length * 2 * c.recurrent_units});
      break;
    }
    case ModelKind::CNN: {
      Var h = ad::relu(tape, ad::conv1d(tape, input, param("conv1/kernel"), param("conv1/bias"), c.conv_stride));
      h = ad::maxpool1d(tape, h, c.pool_size);
      h = ad::relu(tape, ad::conv1d(tape, h, param("conv2/kernel"), param("conv2/bias"), c.conv_stride));
      features = ad::global_maxpool(tape, h);
      break;
    }
  }
  const Var hidden =
      ad::relu(tape, ad::add_bias(tape, ad::matmul(tape, features, param("dense1/kernel")), param("dense1/bias")));
  return ad::add_bias(tape, ad::matmul(tape, hidden, param("dense2/kernel")), param("dense2/bias"));
}

/// Class probabilities for one normalised [140 x 16] stroke. Always evaluated as a batch of one,
/// so the result never depends on what else is being classified.
inline Tensor forward(const Model& m, const Tensor& stroke) {
  if (stroke.rank() != 2 || stroke.dim(0) != m.config.sequence_length || stroke.dim(1) != m.config.input_channels)
    throw dimension_error("forward expects a [" + std::to_string(m.config.sequence_length) + " x " +
                          std::to_string(m.config.input_channels) + "] stroke, got " + to_string(stroke.shape()));
  GradientTape tape;
  const Var in = tape.constant(stroke.reshaped({1, stroke.dim(0), stroke.dim(1)}));
  return softmax(tape.value(model_logits(tape, m, in))).reshaped({gear_count});
}

inline Gear predict(const Model& m, const Tensor& stroke) { return decode_label(forward(m, stroke).data()); }

/// Normalises a raw stroke with the model's statistics, then predicts.
inline Tensor forward(const Model& m, const StrokeSegment& raw) { return forward(m, m.norm.apply(raw).matrix); }
inline Gear predict(const Model& m, const StrokeSegment& raw) { return decode_label(forward(m, raw).data()); }

// ---- model file -------------------------------------------------------------

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"kind", kind_name(c.kind)},         {"recurrent_units", c.recurrent_units},
          {"dense1_units", c.dense1_units},    {"output_units", c.output_units},
          {"cnn_filters", c.cnn_filters},      {"kernel_size", c.kernel_size},
          {"pool_size", c.pool_size},          {"conv_stride", c.conv_stride},
          {"sequence_length", c.sequence_length}, {"input_channels", c.input_channels},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.recurrent_units = j.at("recurrent_units").get<std::size_t>();
  c.dense1_units = j.at("dense1_units").get<std::size_t>();
  c.output_units = j.at("output_units").get<std::size_t>();
  c.cnn_filters = j.at("cnn_filters").get<std::size_t>();
  c.kernel_size = j.at("kernel_size").get<std::size_t>();
  c.pool_size = j.at("pool_size").get<std::size_t>();
  c.conv_stride = j.at("conv_stride").get<std::size_t>();
  c.sequence_length = j.at("sequence_length").get<std::size_t>();
  c.input_channels = j.at("input_channels").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const Tensor& t = m.params.value(i);
    layers.push_back({{"name", m.params.name(i)}, {"shape", t.shape()}, {"values", t.values()}});
  }
  return {{"version", Model::format_version},
          {"kind", kind_name(m.config.kind)},
          {"config", model_config_to_json(m.config)},
          {"norm_stats", {{"mean", m.norm.mean}, {"std", m.norm.std}}},
          {"layers", std::move(layers)}};
}

inline Model model_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != Model::format_version)
      throw version_error("unsupported model format version " + std::to_string(version) + " (expected " +
                          std::to_string(Model::format_version) + ")");
    Model m = init_model(model_config_from_json(j.at("config")));
    if (j.at("kind").get<std::string>() != kind_name(m.config.kind))
      throw format_error("model kind does not match its config");
    m.norm.mean = j.at("norm_stats").at("mean").get<std::array<double, channel_count>>();
    m.norm.std = j.at("norm_stats").at("std").get<std::array<double, channel_count>>();
    const auto& layers = j.at("layers");
    if (layers.size() != m.params.size())
      throw format_error("model file has " + std::to_string(layers.size()) + " layers, expected " +
                         std::to_string(m.params.size()));
    for (const auto& layer : layers) {
      const auto name = layer.at("name").get<std::string>();
      const auto id = m.params.find(name);
      if (!id) throw format_error("unexpected layer '" + name + "' in model file");
      Tensor t(layer.at("shape").get<shape_t>(), layer.at("values").get<std::vector<double>>());
      if (t.shape() != m.params.value(*id).shape())
        throw format_error("layer '" + name + "' has shape " + to_string(t.shape()) + ", expected " +
                           to_string(m.params.value(*id).shape()));
      m.params.value(*id) = std::move(t);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(std::string("corrupt model file: ") + e.what());
  } catch (const dimension_error& e) {
    throw format_error(std::string("corrupt model file: ") + e.what());
  }
}

inline void save_model(const Model& m, const std::string& path) { csv::write_file(path, model_to_json(m).dump()); }

inline Model load_model(const std::string& path) {
  const std::string text = csv::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw format_error("corrupt model file '" + path + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace skigear
