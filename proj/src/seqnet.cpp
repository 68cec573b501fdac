#include "spinefuse/seqnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "spinefuse/errors.hpp"
#include "spinefuse/kernels.hpp"

namespace spinefuse {

using nlohmann::json;

namespace {

Conv3 make_conv3(int c_out, int c_in) {
  Conv3 c;
  c.c_out = c_out;
  c.c_in = c_in;
  c.w.assign(static_cast<std::size_t>(c_out) * c_in * 3, 0.0);
  c.b.assign(c_out, 0.0);
  return c;
}

Pointwise make_pointwise(int c_out, int c_in) {
  Pointwise p;
  p.c_out = c_out;
  p.c_in = c_in;
  p.w.assign(static_cast<std::size_t>(c_out) * c_in, 0.0);
  p.b.assign(c_out, 0.0);
  return p;
}

Stage make_stage(int c_in, int hidden, int layers, int c_out) {
  Stage s;
  s.input_proj = make_pointwise(hidden, c_in);
  s.layers.resize(layers);
  for (int l = 0; l < layers; ++l) {
    s.layers[l].dilation = 1 << l;
    s.layers[l].conv = make_conv3(hidden, hidden);
    s.layers[l].project = make_pointwise(hidden, hidden);
  }
  s.output_proj = make_pointwise(c_out, hidden);
  return s;
}

// Kaiming-uniform fan-in, the a = sqrt(5) leaky-ReLU variant used by the
// usual Conv1d default: bound = 1/sqrt(fan_in). The plain sqrt(6/fan_in)
// bound makes the stacked residual stages saturate their logits at init.
void kaiming_uniform(std::vector<double>& w, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : w) v = rng.uniform(-bound, bound);
}

void append_stage_views(Stage& s, std::vector<TensorView>& out) {
  auto push = [&out](std::vector<double>& v) {
    out.push_back({v.data(), v.size()});
  };
  push(s.input_proj.w);
  push(s.input_proj.b);
  for (auto& layer : s.layers) {
    push(layer.conv.w);
    push(layer.conv.b);
    push(layer.project.w);
    push(layer.project.b);
  }
  push(s.output_proj.w);
  push(s.output_proj.b);
}

void check_input(const FusionModel& m, const Seq& input) {
  if (input.channels != input_channels(m.specs.modality))
    throw param_error("model_forward: input has " +
                      std::to_string(input.channels) + " channels, modality " +
                      std::string(to_string(m.specs.modality)) + " expects " +
                      std::to_string(input_channels(m.specs.modality)));
  if (input.length <= 0) throw param_error("model_forward: empty input");
}

}  // namespace

bool operator==(const ModelSpecs& a, const ModelSpecs& b) {
  return a.modality == b.modality && a.hidden_channels == b.hidden_channels &&
         a.layers_per_stage == b.layers_per_stage &&
         a.num_stages == b.num_stages && a.num_classes == b.num_classes &&
         a.grid_spacing_mm == b.grid_spacing_mm;
}

FusionModel make_model(const ModelSpecs& specs, Rng& rng) {
  if (specs.hidden_channels < 1 || specs.layers_per_stage < 1 ||
      specs.num_stages < 1 || specs.num_classes < 2)
    throw param_error("make_model: bad architecture parameters");
  FusionModel m;
  m.specs = specs;
  m.class_names.assign(kClassNames.begin(), kClassNames.end());
  m.class_names.resize(specs.num_classes, "C?");
  const int h = specs.hidden_channels;
  for (int k = 0; k < specs.num_stages; ++k) {
    const int c_in = k == 0 ? input_channels(specs.modality) : specs.num_classes;
    m.stages.push_back(make_stage(c_in, h, specs.layers_per_stage, specs.num_classes));
  }
  for (auto& stage : m.stages) {
    kaiming_uniform(stage.input_proj.w, stage.input_proj.c_in, rng);
    for (auto& layer : stage.layers) {
      kaiming_uniform(layer.conv.w, layer.conv.c_in * 3, rng);
      kaiming_uniform(layer.project.w, layer.project.c_in, rng);
    }
    kaiming_uniform(stage.output_proj.w, stage.output_proj.c_in, rng);
  }
  return m;
}

std::size_t param_count(const FusionModel& m) {
  std::size_t n = 0;
  auto& mm = const_cast<FusionModel&>(m);
  for (const auto& v : tensor_views(mm)) n += v.size;
  return n;
}

std::vector<TensorView> tensor_views(FusionModel& m) {
  std::vector<TensorView> out;
  for (auto& s : m.stages) append_stage_views(s, out);
  return out;
}

std::vector<TensorView> tensor_views(ModelGrads& g) {
  std::vector<TensorView> out;
  for (auto& s : g.stages) append_stage_views(s, out);
  return out;
}

ModelGrads make_zero_grads(const FusionModel& m) {
  ModelGrads g;
  const int h = m.specs.hidden_channels;
  for (const auto& stage : m.stages) {
    g.stages.push_back(make_stage(stage.input_proj.c_in, h,
                                  static_cast<int>(stage.layers.size()),
                                  stage.output_proj.c_out));
  }
  return g;
}

Seq dilated_conv1d(const Seq& input, const Conv3& kernel, int dilation) {
  if (kernel.c_in != input.channels)
    throw param_error("dilated_conv1d: kernel expects " +
                      std::to_string(kernel.c_in) + " input channels, got " +
                      std::to_string(input.channels));
  if (dilation < 1) throw param_error("dilated_conv1d: dilation must be >= 1");
  Seq out(kernel.c_out, input.length);
  kernels::active_ops().conv3_forward(out.data.data(), input.data.data(),
                                      kernel.w.data(), kernel.b.data(),
                                      kernel.c_out, kernel.c_in, input.length,
                                      dilation);
  return out;
}

Seq softmax_columns(const Seq& logits) {
  Seq probs(logits.channels, logits.length);
  const int c_n = logits.channels;
  for (int t = 0; t < logits.length; ++t) {
    double mx = logits.at(0, t);
    for (int c = 1; c < c_n; ++c) mx = std::max(mx, logits.at(c, t));
    double denom = 0.0;
    for (int c = 0; c < c_n; ++c) {
      const double e = std::exp(logits.at(c, t) - mx);
      probs.at(c, t) = e;
      denom += e;
    }
    for (int c = 0; c < c_n; ++c) probs.at(c, t) /= denom;
  }
  return probs;
}

StageOutput stage_forward(const Stage& stage, const Seq& input,
                          StageTrace* trace) {
  if (input.channels != stage.input_proj.c_in)
    throw param_error("stage_forward: input channel mismatch");
  const auto& ops = kernels::active_ops();
  const int n = input.length;
  const int h = stage.input_proj.c_out;

  Seq x(h, n);
  ops.pointwise_forward(x.data.data(), input.data.data(),
                        stage.input_proj.w.data(), stage.input_proj.b.data(), h,
                        stage.input_proj.c_in, n);
  if (trace != nullptr) {
    trace->input = input;
    trace->hidden0 = x;
    trace->layers.clear();
    trace->layers.reserve(stage.layers.size());
  }

  Seq u(h, n), v(h, n), w(h, n);
  for (const auto& layer : stage.layers) {
    ops.conv3_forward(u.data.data(), x.data.data(), layer.conv.w.data(),
                      layer.conv.b.data(), h, h, n, layer.dilation);
    for (std::size_t i = 0; i < u.data.size(); ++i)
      v.data[i] = u.data[i] > 0.0 ? u.data[i] : 0.0;
    ops.pointwise_forward(w.data.data(), v.data.data(), layer.project.w.data(),
                          layer.project.b.data(), h, h, n);
    for (std::size_t i = 0; i < x.data.size(); ++i) w.data[i] += x.data[i];
    if (trace != nullptr) trace->layers.push_back({u, v, w});
    std::swap(x, w);
  }

  StageOutput out;
  out.logits = Seq(stage.output_proj.c_out, n);
  ops.pointwise_forward(out.logits.data.data(), x.data.data(),
                        stage.output_proj.w.data(), stage.output_proj.b.data(),
                        stage.output_proj.c_out, h, n);
  out.probs = softmax_columns(out.logits);
  if (trace != nullptr) {
    trace->logits = out.logits;
    trace->probs = out.probs;
  }
  return out;
}

std::vector<Seq> model_forward(const FusionModel& m, const Seq& input,
                               ForwardTrace* trace) {
  check_input(m, input);
  if (trace != nullptr) {
    trace->stages.clear();
    trace->stages.resize(m.stages.size());
  }
  std::vector<Seq> per_stage;
  per_stage.reserve(m.stages.size());
  const Seq* stage_in = &input;
  for (std::size_t k = 0; k < m.stages.size(); ++k) {
    StageTrace* st = trace != nullptr ? &trace->stages[k] : nullptr;
    per_stage.push_back(stage_forward(m.stages[k], *stage_in, st).probs);
    stage_in = &per_stage.back();
  }
  return per_stage;
}

LossResult seg_loss(const std::vector<Seq>& per_stage_probs,
                    const LevelSegmentation& target, const LossSettings& ls) {
  if (per_stage_probs.empty()) throw param_error("seg_loss: no stages");
  const int n = per_stage_probs.front().length;
  const int c_n = per_stage_probs.front().channels;
  if (n == 0) throw param_error("seg_loss: zero-length target");
  if (static_cast<int>(target.size()) != n)
    throw param_error("seg_loss: target length " + std::to_string(target.size()) +
                      " != sequence length " + std::to_string(n));
  for (int y : target.labels)
    if (y < 0 || y >= c_n) throw param_error("seg_loss: label out of range");

  LossResult res;
  res.dlogits.reserve(per_stage_probs.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const double smooth_scale = ls.lambda_smooth / (static_cast<double>(n) * c_n);

  for (std::size_t k = 0; k < per_stage_probs.size(); ++k) {
    const Seq& p = per_stage_probs[k];
    if (p.length != n || p.channels != c_n)
      throw param_error("seg_loss: stage shape mismatch");
    Seq dz(c_n, n);

    // cross-entropy; gradient vanishes where the log is floored
    double ce = 0.0;
    for (int t = 0; t < n; ++t) {
      const int y = target.labels[t];
      const double py = p.at(y, t);
      ce += -std::log(std::max(py, kLogProbFloor));
      if (py > kLogProbFloor) {
        for (int c = 0; c < c_n; ++c)
          dz.at(c, t) += inv_n * (p.at(c, t) - (c == y ? 1.0 : 0.0));
      }
    }
    ce *= inv_n;
    res.value += ce;
    if (k + 1 == per_stage_probs.size()) res.last_stage_ce = ce;

    // truncated smoothing on consecutive log-probs, previous position constant
    if (ls.lambda_smooth != 0.0) {
      double tmse = 0.0;
      std::vector<double> glp(c_n);
      for (int t = 1; t < n; ++t) {
        double gsum = 0.0;
        for (int c = 0; c < c_n; ++c) {
          const double pc = p.at(c, t);
          const double lp = std::log(std::max(pc, kLogProbFloor));
          const double lprev = std::log(std::max(p.at(c, t - 1), kLogProbFloor));
          const double delta = lp - lprev;
          const double clipped = std::min(std::abs(delta), ls.tau);
          tmse += clipped * clipped;
          double g = 0.0;
          if (std::abs(delta) < ls.tau && pc > kLogProbFloor)
            g = 2.0 * smooth_scale * delta;
          glp[c] = g;
          gsum += g;
        }
        for (int c = 0; c < c_n; ++c)
          dz.at(c, t) += glp[c] - p.at(c, t) * gsum;
      }
      res.value += smooth_scale * tmse;
    }
    res.dlogits.push_back(std::move(dz));
  }
  return res;
}

namespace {

// Backprop one stage. dlogits is the total gradient at this stage's logits;
// returns the gradient w.r.t. the stage input. Parameter grads accumulate
// into `g`.
Seq stage_backward(const Stage& stage, const StageTrace& tr, const Seq& dlogits,
                   Stage& g) {
  const auto& ops = kernels::active_ops();
  const int n = tr.input.length;
  const int h = stage.input_proj.c_out;

  const Seq& last_hidden =
      tr.layers.empty() ? tr.hidden0 : tr.layers.back().out;
  ops.pointwise_backward_params(g.output_proj.w.data(), g.output_proj.b.data(),
                                dlogits.data.data(), last_hidden.data.data(),
                                stage.output_proj.c_out, h, n);
  Seq gx(h, n);
  ops.pointwise_backward_data(gx.data.data(), dlogits.data.data(),
                              stage.output_proj.w.data(),
                              stage.output_proj.c_out, h, n);

  Seq gv(h, n), gu(h, n);
  for (int l = static_cast<int>(stage.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = stage.layers[l];
    auto& glayer = g.layers[l];
    const Seq& layer_in = l == 0 ? tr.hidden0 : tr.layers[l - 1].out;
    const auto& ltr = tr.layers[l];

    // out = layer_in + project(relu(conv(layer_in)))
    std::fill(gv.data.begin(), gv.data.end(), 0.0);
    ops.pointwise_backward_params(glayer.project.w.data(),
                                  glayer.project.b.data(), gx.data.data(),
                                  ltr.relu.data.data(), h, h, n);
    ops.pointwise_backward_data(gv.data.data(), gx.data.data(),
                                layer.project.w.data(), h, h, n);
    for (std::size_t i = 0; i < gu.data.size(); ++i)
      gu.data[i] = ltr.pre_relu.data[i] > 0.0 ? gv.data[i] : 0.0;
    ops.conv3_backward_params(glayer.conv.w.data(), glayer.conv.b.data(),
                              gu.data.data(), layer_in.data.data(), h, h, n,
                              layer.dilation);
    // residual: gradient w.r.t. layer_in = gx (identity path) + conv path
    ops.conv3_backward_data(gx.data.data(), gu.data.data(), layer.conv.w.data(),
                            h, h, n, layer.dilation);
  }

  ops.pointwise_backward_params(g.input_proj.w.data(), g.input_proj.b.data(),
                                gx.data.data(), tr.input.data.data(), h,
                                stage.input_proj.c_in, n);
  Seq gin(stage.input_proj.c_in, n);
  ops.pointwise_backward_data(gin.data.data(), gx.data.data(),
                              stage.input_proj.w.data(), h,
                              stage.input_proj.c_in, n);
  return gin;
}

// Convert a gradient w.r.t. softmax outputs into a gradient w.r.t. logits
// and add it onto dz.
void add_softmax_backward(const Seq& probs, const Seq& gprobs, Seq& dz) {
  const int c_n = probs.channels;
  for (int t = 0; t < probs.length; ++t) {
    double dot = 0.0;
    for (int c = 0; c < c_n; ++c) dot += gprobs.at(c, t) * probs.at(c, t);
    for (int c = 0; c < c_n; ++c)
      dz.at(c, t) += probs.at(c, t) * (gprobs.at(c, t) - dot);
  }
}

}  // namespace

BackwardResult backward(const FusionModel& m, const Seq& input,
                        const LevelSegmentation& target,
                        const LossSettings& ls) {
  ForwardTrace trace;
  std::vector<Seq> probs = model_forward(m, input, &trace);
  BackwardResult res;
  res.loss = seg_loss(probs, target, ls);
  res.grads = make_zero_grads(m);

  // walk stages in reverse, carrying the gradient w.r.t. the stage input
  // (which is the previous stage's softmax output)
  Seq gprobs_prev;
  for (int k = static_cast<int>(m.stages.size()) - 1; k >= 0; --k) {
    Seq dz = std::move(res.loss.dlogits[k]);
    if (k + 1 < static_cast<int>(m.stages.size()))
      add_softmax_backward(trace.stages[k].probs, gprobs_prev, dz);
    res.loss.dlogits[k] = dz;  // keep the loss-only + coupling grads consistent
    gprobs_prev = stage_backward(m.stages[k], trace.stages[k], dz,
                                 res.grads.stages[k]);
  }
  return res;
}

// --- serialization ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'P', 'N', 'F', 'M', 'D', 'L', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64_le(std::string& out, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

double get_f64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

json header_json(const FusionModel& m) {
  json dil = json::array();
  for (int l = 0; l < m.specs.layers_per_stage; ++l) dil.push_back(1 << l);
  return json{{"format", "spinefuse-model"},
              {"version", 1},
              {"modality", to_string(m.specs.modality)},
              {"class_names", m.class_names},
              {"grid_spacing_mm", m.specs.grid_spacing_mm},
              {"hidden_channels", m.specs.hidden_channels},
              {"layers_per_stage", m.specs.layers_per_stage},
              {"num_stages", m.specs.num_stages},
              {"num_classes", m.specs.num_classes},
              {"kernel_size", 3},
              {"dilations", dil},
              {"input_channels", input_channels(m.specs.modality)},
              {"param_count", param_count(m)},
              {"train_config_hash", m.train_config_hash}};
}

}  // namespace

void save_model(const FusionModel& m, const std::filesystem::path& path) {
  const std::string header = header_json(m).dump();
  std::string blob;
  blob.reserve(16 + header.size() + param_count(m) * 8);
  blob.append(kMagic, sizeof(kMagic));
  put_u32_le(blob, static_cast<std::uint32_t>(header.size()));
  blob += header;
  FusionModel& mm = const_cast<FusionModel&>(m);
  for (const auto& view : tensor_views(mm))
    for (std::size_t i = 0; i < view.size; ++i) put_f64_le(blob, view.data[i]);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open model file for writing: " + path.string());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw data_error("failed writing model file: " + path.string());
}

FusionModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open model file: " + path.string());
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());

  const auto fail = [&path](const std::string& why) -> data_error {
    return data_error("model file " + path.string() + ": " + why);
  };
  if (blob.size() < sizeof(kMagic) + 4) throw fail("truncated (no header)");
  if (std::memcmp(blob.data(), kMagic, sizeof(kMagic)) != 0)
    throw fail("bad magic, not a spinefuse model");
  std::uint32_t hlen = 0;
  for (int i = 0; i < 4; ++i)
    hlen |= static_cast<std::uint32_t>(
                static_cast<unsigned char>(blob[sizeof(kMagic) + i]))
            << (8 * i);
  const std::size_t payload_off = sizeof(kMagic) + 4 + hlen;
  if (blob.size() < payload_off) throw fail("truncated header");

  json h;
  try {
    h = json::parse(blob.substr(sizeof(kMagic) + 4, hlen));
  } catch (const json::exception& e) {
    throw fail(std::string("unparseable header: ") + e.what());
  }
  try {
    if (h.at("format") != "spinefuse-model") throw fail("wrong format tag");
    if (h.at("version") != 1)
      throw fail("unsupported version " + h.at("version").dump());
    ModelSpecs specs;
    specs.modality = modality_from_string(h.at("modality").get<std::string>());
    specs.hidden_channels = h.at("hidden_channels").get<int>();
    specs.layers_per_stage = h.at("layers_per_stage").get<int>();
    specs.num_stages = h.at("num_stages").get<int>();
    specs.num_classes = h.at("num_classes").get<int>();
    specs.grid_spacing_mm = h.at("grid_spacing_mm").get<double>();

    Rng dummy(0);
    FusionModel m = make_model(specs, dummy);
    m.class_names = h.at("class_names").get<std::vector<std::string>>();
    m.train_config_hash = h.at("train_config_hash").get<std::uint64_t>();
    if (static_cast<int>(m.class_names.size()) != specs.num_classes)
      throw fail("class_names size mismatch");

    const std::size_t count = param_count(m);
    if (h.at("param_count").get<std::size_t>() != count)
      throw fail("param_count does not match architecture");
    if (blob.size() != payload_off + count * 8)
      throw fail("payload size mismatch (expected " +
                 std::to_string(payload_off + count * 8) + " bytes, file has " +
                 std::to_string(blob.size()) + ")");
    const auto* p = reinterpret_cast<const unsigned char*>(blob.data()) + payload_off;
    for (auto& view : tensor_views(m)) {
      for (std::size_t i = 0; i < view.size; ++i, p += 8)
        view.data[i] = get_f64_le(p);
    }
    return m;
  } catch (const json::exception& e) {
    throw fail(std::string("bad header field: ") + e.what());
  } catch (const param_error& e) {
    throw fail(std::string("bad header field: ") + e.what());
  }
}

}  // namespace spinefuse
