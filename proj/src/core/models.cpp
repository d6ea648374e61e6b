/*
 * Copyright 2026 medden authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may obtain a copy of the License at
 *     http://www.apache.org/licenses/LICENSE-2.0
 */
#include "core/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "core/kernels.hpp"
#include "core/rng.hpp"

namespace medden {

using nlohmann::json;

const char* arch_name(Arch a) { return a == Arch::UNet ? "unet" : "unetpp"; }

Arch arch_from_name(const std::string& name) {
  if (name == "unet") return Arch::UNet;
  if (name == "unetpp" || name == "unet++") return Arch::UNetPP;
  throw ConfigError("unknown architecture: " + name);
}

namespace {

constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;

void validate_config(const ModelConfig& cfg) {
  if (cfg.base_ch < 1) throw ConfigError("base_ch must be positive");
  if (cfg.depth < 2) throw ConfigError("depth must be at least 2");
  if (cfg.in_ch != 1 || cfg.out_ch != 1) {
    throw ConfigError("models are single-channel (grayscale in, grayscale out)");
  }
  if (cfg.deep_supervision && cfg.arch != Arch::UNetPP) {
    throw ConfigError("deep_supervision applies to unetpp only");
  }
}

std::int64_t level_channels(const ModelConfig& cfg, int level) {
  return static_cast<std::int64_t>(cfg.base_ch) << level;
}

}  // namespace

struct GraphBuilder {
  Graph* g;
  CounterRng root;

  GraphBuilder(Graph* graph, std::uint64_t seed) : g(graph), root(seed) {}

  void add_param(const std::string& name, Shape shape, std::vector<double> values) {
    g->param_index_[name] = g->params_.size();
    g->params_.emplace_back(name, Tensor::param(std::move(shape), std::move(values), DType::F32));
  }

  void add_buffer(const std::string& name, Shape shape, double fill) {
    g->buffer_index_[name] = g->buffers_.size();
    g->buffers_.emplace_back(name, Tensor::full(std::move(shape), fill, DType::F32));
  }

  // Kaiming-uniform with ReLU gain: bound = sqrt(6 / fan_in). Bias uses the
  // conventional uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)). Streams are keyed
  // by parameter name so the layout never depends on registration order.
  std::vector<double> uniform_init(const std::string& name, std::int64_t n, double bound) {
    CounterRng rng = root.split(name);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = rng.next_uniform(-bound, bound);
    return v;
  }

  void conv(const std::string& prefix, std::int64_t cout, std::int64_t cin, std::int64_t k) {
    const double fan_in = static_cast<double>(cin * k * k);
    add_param(prefix + ".weight", {cout, cin, k, k},
              uniform_init(prefix + ".weight", cout * cin * k * k, std::sqrt(6.0 / fan_in)));
    add_param(prefix + ".bias", {cout},
              uniform_init(prefix + ".bias", cout, 1.0 / std::sqrt(fan_in)));
  }

  // Transposed conv weight is stored [Cin, Cout, 2, 2]; fan-in follows the
  // second dimension as in the reference framework.
  void conv_transpose(const std::string& prefix, std::int64_t cin, std::int64_t cout) {
    const double fan_in = static_cast<double>(cout * 4);
    add_param(prefix + ".weight", {cin, cout, 2, 2},
              uniform_init(prefix + ".weight", cin * cout * 4, std::sqrt(6.0 / fan_in)));
    add_param(prefix + ".bias", {cout},
              uniform_init(prefix + ".bias", cout, 1.0 / std::sqrt(fan_in)));
  }

  void batchnorm(const std::string& prefix, std::int64_t c) {
    add_param(prefix + ".gamma", {c}, std::vector<double>(static_cast<std::size_t>(c), 1.0));
    add_param(prefix + ".beta", {c}, std::vector<double>(static_cast<std::size_t>(c), 0.0));
    add_buffer(prefix + ".running_mean", {c}, 0.0);
    add_buffer(prefix + ".running_var", {c}, 1.0);
  }

  void double_conv(const std::string& prefix, std::int64_t cin, std::int64_t cout) {
    conv(prefix + ".conv1", cout, cin, 3);
    batchnorm(prefix + ".bn1", cout);
    conv(prefix + ".conv2", cout, cout, 3);
    batchnorm(prefix + ".bn2", cout);
  }
};

Graph Graph::build(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Graph g;
  g.cfg_ = cfg;
  g.seed_ = seed;
  GraphBuilder b(&g, seed);

  const int depth = cfg.depth;
  if (cfg.arch == Arch::UNet) {
    for (int i = 0; i < depth; ++i) {
      const std::int64_t cin = i == 0 ? cfg.in_ch : level_channels(cfg, i - 1);
      b.double_conv("enc" + std::to_string(i), cin, level_channels(cfg, i));
    }
    for (int i = depth - 2; i >= 0; --i) {
      b.conv_transpose("up" + std::to_string(i), level_channels(cfg, i + 1), level_channels(cfg, i));
      b.double_conv("dec" + std::to_string(i), 2 * level_channels(cfg, i), level_channels(cfg, i));
    }
    b.conv("head", cfg.out_ch, level_channels(cfg, 0), 1);
  } else {
    // Nested grid X[i][j], i + j <= depth-1. Column 0 is the encoder ladder;
    // node (i,j>=1) consumes every earlier node on its row plus the bilinear
    // upsample of (i+1, j-1).
    for (int i = 0; i < depth; ++i) {
      const std::int64_t cin = i == 0 ? cfg.in_ch : level_channels(cfg, i - 1);
      b.double_conv("x" + std::to_string(i) + "_0", cin, level_channels(cfg, i));
    }
    for (int j = 1; j < depth; ++j) {
      for (int i = 0; i + j <= depth - 1; ++i) {
        const std::int64_t cin =
            static_cast<std::int64_t>(j) * level_channels(cfg, i) + level_channels(cfg, i + 1);
        b.double_conv("x" + std::to_string(i) + "_" + std::to_string(j), cin,
                      level_channels(cfg, i));
      }
    }
    const int first_head = cfg.deep_supervision ? 1 : depth - 1;
    for (int j = first_head; j < depth; ++j) {
      b.conv("head" + std::to_string(j), cfg.out_ch, level_channels(cfg, 0), 1);
    }
  }
  return g;
}

Tensor& Graph::param(const std::string& name) {
  auto it = param_index_.find(name);
  if (it == param_index_.end()) throw ContractError("unknown parameter: " + name);
  return params_[it->second].second;
}

Tensor& Graph::buffer(const std::string& name) {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw ContractError("unknown buffer: " + name);
  return buffers_[it->second].second;
}

const Tensor& Graph::buffer(const std::string& name) const {
  auto it = buffer_index_.find(name);
  if (it == buffer_index_.end()) throw ContractError("unknown buffer: " + name);
  return buffers_[it->second].second;
}

void Graph::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void Graph::copy_values_from(const Graph& src, bool include_buffers) {
  if (src.params_.size() != params_.size()) throw DivergenceError("replica parameter sets differ");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].first != src.params_[i].first ||
        params_[i].second.numel() != src.params_[i].second.numel()) {
      throw DivergenceError("replica parameter " + params_[i].first + " differs");
    }
    std::memcpy(params_[i].second.mutable_data(), src.params_[i].second.data(),
                sizeof(double) * static_cast<std::size_t>(params_[i].second.numel()));
  }
  if (include_buffers) {
    for (std::size_t i = 0; i < buffers_.size(); ++i) {
      std::memcpy(buffers_[i].second.mutable_data(), src.buffers_[i].second.data(),
                  sizeof(double) * static_cast<std::size_t>(buffers_[i].second.numel()));
    }
  }
}

std::int64_t Graph::param_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

namespace {

struct ForwardCtx {
  Graph* g;
  const ForwardOptions* opts;

  Tensor conv(const std::string& prefix, const Tensor& x, int padding) {
    Tensor w = g->param(prefix + ".weight");
    Tensor bias = g->param(prefix + ".bias");
    if (opts->amp && x.dtype() != DType::F64) {
      return conv2d(cast(x, DType::F16E), cast(w, DType::F16E), cast(bias, DType::F16E), 1,
                    padding);
    }
    return conv2d(x, w, bias, 1, padding);
  }

  Tensor conv_transpose(const std::string& prefix, const Tensor& x) {
    Tensor w = g->param(prefix + ".weight");
    Tensor bias = g->param(prefix + ".bias");
    if (opts->amp && x.dtype() != DType::F64) {
      return conv_transpose2d(cast(x, DType::F16E), cast(w, DType::F16E), cast(bias, DType::F16E));
    }
    return conv_transpose2d(x, w, bias);
  }

  Tensor bn(const std::string& prefix, const Tensor& x) {
    BatchNormOpts bo;
    bo.momentum = kBnMomentum;
    bo.eps = kBnEps;
    bo.training = opts->training && !opts->frozen_norm;
    bo.update_running = bo.training && opts->update_norm;
    return batchnorm2d(x, g->param(prefix + ".gamma"), g->param(prefix + ".beta"),
                       g->buffer(prefix + ".running_mean"), g->buffer(prefix + ".running_var"), bo);
  }

  Tensor block(const std::string& prefix, const Tensor& x) {
    Tensor h = relu(bn(prefix + ".bn1", conv(prefix + ".conv1", x, 1)));
    return relu(bn(prefix + ".bn2", conv(prefix + ".conv2", h, 1)));
  }
};

}  // namespace

std::vector<Tensor> Graph::forward(const Tensor& batch, const ForwardOptions& opts) {
  if (batch.rank() != 4 || batch.dim(1) != cfg_.in_ch) {
    throw SizeError("forward: batch must be [N," + std::to_string(cfg_.in_ch) + ",H,W], got " +
                    shape_str(batch.shape()));
  }
  const std::int64_t div = std::int64_t{1} << (cfg_.depth - 1);
  if (batch.dim(2) % div != 0 || batch.dim(3) % div != 0) {
    throw SizeError("forward: spatial extents must be divisible by " + std::to_string(div));
  }

  ForwardCtx ctx{this, &opts};
  const int depth = cfg_.depth;

  if (cfg_.arch == Arch::UNet) {
    std::vector<Tensor> skips;
    Tensor h = batch;
    for (int i = 0; i < depth; ++i) {
      if (i > 0) h = maxpool2d(h);
      h = ctx.block("enc" + std::to_string(i), h);
      skips.push_back(h);
    }
    for (int i = depth - 2; i >= 0; --i) {
      Tensor up = ctx.conv_transpose("up" + std::to_string(i), h);
      h = ctx.block("dec" + std::to_string(i), concat_channels(skips[static_cast<std::size_t>(i)], up));
    }
    return {ctx.conv("head", h, 0)};
  }

  // U-Net++
  std::vector<std::vector<Tensor>> x(static_cast<std::size_t>(depth));
  for (int i = 0; i < depth; ++i) {
    Tensor in = i == 0 ? batch : maxpool2d(x[static_cast<std::size_t>(i - 1)][0]);
    x[static_cast<std::size_t>(i)].push_back(ctx.block("x" + std::to_string(i) + "_0", in));
  }
  for (int j = 1; j < depth; ++j) {
    for (int i = 0; i + j <= depth - 1; ++i) {
      Tensor cat = x[static_cast<std::size_t>(i)][0];
      for (int p = 1; p < j; ++p) {
        cat = concat_channels(cat, x[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)]);
      }
      Tensor up = bilinear_upsample2d(x[static_cast<std::size_t>(i + 1)][static_cast<std::size_t>(j - 1)]);
      cat = concat_channels(cat, up);
      x[static_cast<std::size_t>(i)].push_back(
          ctx.block("x" + std::to_string(i) + "_" + std::to_string(j), cat));
    }
  }

  std::vector<Tensor> outs;
  const int first_head = cfg_.deep_supervision ? 1 : depth - 1;
  for (int j = first_head; j < depth; ++j) {
    outs.push_back(ctx.conv("head" + std::to_string(j), x[0][static_cast<std::size_t>(j)], 0));
  }
  return outs;
}

Tensor Graph::head_loss(const std::vector<Tensor>& heads, const Tensor& target) const {
  if (heads.empty()) throw ContractError("head_loss: no outputs");
  Tensor loss = l1_loss(heads[0], target);
  for (std::size_t i = 1; i < heads.size(); ++i) {
    loss = add(loss, l1_loss(heads[i], target));
  }
  if (heads.size() > 1) loss = mul_scalar(loss, 1.0 / static_cast<double>(heads.size()));
  return loss;
}

const Tensor& Graph::inference_head(const std::vector<Tensor>& heads) {
  if (heads.empty()) throw ContractError("inference_head: no outputs");
  return heads.back();
}

// ---- checkpoints ----

namespace {

constexpr char kMagic[] = "MDNCKPT1";

void append_f32_le(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t u;
  std::memcpy(&u, &f, sizeof(u));
  out.push_back(static_cast<char>(u & 0xFF));
  out.push_back(static_cast<char>((u >> 8) & 0xFF));
  out.push_back(static_cast<char>((u >> 16) & 0xFF));
  out.push_back(static_cast<char>((u >> 24) & 0xFF));
}

float read_f32_le(const unsigned char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                          (static_cast<std::uint32_t>(p[2]) << 16) |
                          (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, sizeof(f));
  return f;
}

json entry_json(const std::string& name, const Tensor& t, const char* kind, std::int64_t offset) {
  json e;
  e["name"] = name;
  e["shape"] = t.shape();
  e["dtype"] = dtype_name(t.dtype());
  e["offset"] = offset;
  e["kind"] = kind;
  return e;
}

}  // namespace

void save_checkpoint(const std::string& path, const Graph& g, const CheckpointExtras& extras) {
  json header;
  header["format"] = 1;
  header["arch"] = arch_name(g.config().arch);
  header["base_ch"] = g.config().base_ch;
  header["depth"] = g.config().depth;
  header["in_ch"] = g.config().in_ch;
  header["out_ch"] = g.config().out_ch;
  header["deep_supervision"] = g.config().deep_supervision;
  header["seed"] = g.seed();
  if (extras.epoch) header["epoch"] = *extras.epoch;
  if (extras.val_loss) header["val_loss"] = *extras.val_loss;
  if (extras.sigma) header["sigma"] = *extras.sigma;
  if (extras.opt_step || extras.loss_scale) {
    json opt;
    if (extras.opt_step) opt["step"] = *extras.opt_step;
    if (extras.loss_scale) opt["loss_scale"] = *extras.loss_scale;
    if (extras.scale_streak) opt["streak"] = *extras.scale_streak;
    header["opt"] = opt;
  }

  json entries = json::array();
  std::string payload;
  std::int64_t offset = 0;
  auto emit = [&](const std::string& name, const Tensor& t, const char* kind) {
    entries.push_back(entry_json(name, t, kind, offset));
    for (std::int64_t i = 0; i < t.numel(); ++i) append_f32_le(payload, t.data()[i]);
    offset += 4 * t.numel();
  };
  for (std::size_t i = 0; i < g.num_params(); ++i) emit(g.param_name(i), g.param(i), "param");
  for (std::size_t i = 0; i < g.num_buffers(); ++i) emit(g.buffer_name(i), g.buffer(i), "buffer");
  auto emit_opt = [&](const std::vector<std::pair<std::string, std::vector<double>>>& slots,
                      const char* kind) {
    for (const auto& [name, vals] : slots) {
      json e;
      e["name"] = name;
      e["shape"] = json::array({static_cast<std::int64_t>(vals.size())});
      e["dtype"] = "f32";
      e["offset"] = offset;
      e["kind"] = kind;
      entries.push_back(e);
      for (double v : vals) append_f32_le(payload, v);
      offset += 4 * static_cast<std::int64_t>(vals.size());
    }
  };
  emit_opt(extras.opt_m, "opt_m");
  emit_opt(extras.opt_v, "opt_v");
  header["entries"] = entries;

  const std::string head_text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out << kMagic << '\n' << head_text.size() << '\n' << head_text;
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw IoError("short write on checkpoint: " + path);
}

Graph load_checkpoint(const std::string& path, CheckpointExtras* extras) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw FormatError("not a checkpoint file: " + path);
  std::string lenline;
  std::getline(in, lenline);
  std::size_t head_len = 0;
  try {
    head_len = static_cast<std::size_t>(std::stoull(lenline));
  } catch (...) {
    throw FormatError("corrupt checkpoint header length in " + path);
  }
  std::string head_text(head_len, '\0');
  in.read(head_text.data(), static_cast<std::streamsize>(head_len));
  if (!in) throw FormatError("truncated checkpoint header in " + path);

  json header;
  try {
    header = json::parse(head_text);
  } catch (const json::exception& e) {
    throw FormatError("bad checkpoint header: " + std::string(e.what()));
  }

  ModelConfig cfg;
  cfg.arch = arch_from_name(header.at("arch").get<std::string>());
  cfg.base_ch = header.at("base_ch").get<int>();
  cfg.depth = header.at("depth").get<int>();
  cfg.in_ch = header.at("in_ch").get<int>();
  cfg.out_ch = header.at("out_ch").get<int>();
  cfg.deep_supervision = header.at("deep_supervision").get<bool>();
  Graph g = Graph::build(cfg, header.at("seed").get<std::uint64_t>());

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());

  auto read_into = [&](double* dst, std::int64_t n, std::int64_t offset, const std::string& name) {
    if (offset < 0 || static_cast<std::size_t>(offset + 4 * n) > payload.size()) {
      throw FormatError("checkpoint payload out of range for " + name);
    }
    for (std::int64_t i = 0; i < n; ++i) {
      dst[i] = static_cast<double>(read_f32_le(bytes + offset + 4 * i));
    }
  };

  for (const auto& e : header.at("entries")) {
    const std::string name = e.at("name").get<std::string>();
    const std::string kind = e.at("kind").get<std::string>();
    const auto offset = e.at("offset").get<std::int64_t>();
    Shape shape = e.at("shape").get<Shape>();
    const std::int64_t n = shape_numel(shape);

    if (kind == "param") {
      Tensor& t = g.param(name);
      if (t.shape() != shape) throw FormatError("checkpoint shape mismatch for " + name);
      read_into(t.mutable_data(), n, offset, name);
    } else if (kind == "buffer") {
      Tensor& t = g.buffer(name);
      if (t.shape() != shape) throw FormatError("checkpoint shape mismatch for " + name);
      read_into(t.mutable_data(), n, offset, name);
    } else if (kind == "opt_m" || kind == "opt_v") {
      if (!extras) continue;
      std::vector<double> vals(static_cast<std::size_t>(n));
      read_into(vals.data(), n, offset, name);
      auto& slot = kind == "opt_m" ? extras->opt_m : extras->opt_v;
      slot.emplace_back(name, std::move(vals));
    } else {
      throw FormatError("unknown checkpoint entry kind: " + kind);
    }
  }

  if (extras) {
    if (header.contains("epoch")) extras->epoch = header["epoch"].get<int>();
    if (header.contains("val_loss")) extras->val_loss = header["val_loss"].get<double>();
    if (header.contains("sigma")) extras->sigma = header["sigma"].get<double>();
    if (header.contains("opt")) {
      const auto& opt = header["opt"];
      if (opt.contains("step")) extras->opt_step = opt["step"].get<std::int64_t>();
      if (opt.contains("loss_scale")) extras->loss_scale = opt["loss_scale"].get<double>();
      if (opt.contains("streak")) extras->scale_streak = opt["streak"].get<std::int64_t>();
    }
  }
  return g;
}

}  // namespace medden
