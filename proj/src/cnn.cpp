#include "proofkit/cnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace proofkit {

void CnnConfig::validate() const {
  if (input_edge < 1) throw Error("invalid_argument", "input_edge must be >= 1");
  if (in_channels < 1) throw Error("invalid_argument", "in_channels must be >= 1");
  int64_t size = input_edge;
  for (const auto& b : conv_blocks) {
    if (b.filters < 1 || b.kernel < 1 || b.kernel % 2 == 0 || b.pool < 1)
      throw Error("invalid_argument", "conv blocks need filters >= 1, odd kernel, pool >= 1");
    size /= b.pool;
    if (size < 1) throw Error("invalid_argument", "spatial extent vanishes after pooling");
  }
  for (int w : fc_widths)
    if (w < 1) throw Error("invalid_argument", "fc widths must be >= 1");
}

CnnConfig CnnConfig::full_scale() {
  CnnConfig c;
  c.input_edge = 130;
  c.conv_blocks = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {64, 3, 2}};
  c.fc_widths = {128};
  return c;
}

CnnLayout::CnnLayout(const CnnConfig& cfg) {
  cfg.validate();
  int64_t size = cfg.input_edge;
  int cin = cfg.in_channels;
  size_t off = 0;
  for (const auto& b : cfg.conv_blocks) {
    ConvLayerShape s;
    s.cin = cin;
    s.cout = b.filters;
    s.kernel = b.kernel;
    s.pad = b.kernel / 2;
    s.pool = b.pool;
    s.size = size;
    s.padded = size + 2 * s.pad;
    s.pooled = size / b.pool;
    s.w_offset = off;
    off += static_cast<size_t>(s.cout) * static_cast<size_t>(s.cin) * static_cast<size_t>(b.kernel * b.kernel * b.kernel);
    s.b_offset = off;
    off += static_cast<size_t>(s.cout);
    conv.push_back(s);
    cin = b.filters;
    size = s.pooled;
  }
  flat_size = static_cast<size_t>(cin) * static_cast<size_t>(size * size * size);
  int in = static_cast<int>(flat_size);
  auto add_fc = [&](int out, bool relu) {
    FcLayerShape f;
    f.in = in;
    f.out = out;
    f.relu = relu;
    f.w_offset = off;
    off += static_cast<size_t>(in) * static_cast<size_t>(out);
    f.b_offset = off;
    off += static_cast<size_t>(out);
    fc.push_back(f);
    in = out;
  };
  for (int w : cfg.fc_widths) add_fc(w, true);
  add_fc(1, false);
  param_count = off;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double bce_with_logit(double z, double label) { return softplus(z) - label * z; }

template <class T>
CnnNet<T>::CnnNet(const CnnConfig& config) : config_(config), layout_(config) {}

template <class T>
typename CnnNet<T>::Workspace CnnNet<T>::make_workspace() const {
  Workspace ws;
  for (const auto& c : layout_.conv) {
    const size_t p3 = static_cast<size_t>(c.padded * c.padded * c.padded);
    ws.in_pad.emplace_back(static_cast<size_t>(c.cin) * p3, T{});
    ws.pre.emplace_back(static_cast<size_t>(c.cout) * p3, T{});
    ws.argmax.emplace_back(static_cast<size_t>(c.cout) * static_cast<size_t>(c.pooled * c.pooled * c.pooled), 0u);
    ws.d_pre.emplace_back(static_cast<size_t>(c.cout) * p3, T{});
    ws.d_in_pad.emplace_back(static_cast<size_t>(c.cin) * p3, T{});
  }
  size_t widest = layout_.flat_size;
  for (const auto& f : layout_.fc) {
    ws.fc_in.emplace_back(static_cast<size_t>(f.in), T{});
    ws.fc_pre.emplace_back(static_cast<size_t>(f.out), T{});
    widest = std::max(widest, static_cast<size_t>(f.in));
  }
  ws.d_vec_a.assign(widest, T{});
  ws.d_vec_b.assign(widest, T{});
  return ws;
}

namespace {

// Flattened index span covering every interior voxel of a padded cube.
struct Span {
  int64_t first, len, stride1;
};

Span interior_span(const ConvLayerShape& c) {
  const int64_t P = c.padded;
  const int64_t step = 1 + P + P * P;
  return {c.pad * step, (c.size - 1) * step + 1, step};
}

int64_t tap_offset(int64_t dx, int64_t dy, int64_t dz, int64_t P) { return dx + P * (dy + P * dz); }

template <class T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, int64_t n) {
#pragma omp simd
  for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
inline T dot(const T* __restrict x, const T* __restrict y, int64_t n) {
  T s = 0;
#pragma omp simd reduction(+ : s)
  for (int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

int64_t flip_coord(int64_t v, int64_t size, bool flip) { return flip ? size - 1 - v : v; }

}  // namespace

template <class T>
T CnnNet<T>::logit(std::span<const T> params, std::span<const float> input, Workspace& ws, FlipMask flips) const {
  const int64_t S = config_.input_edge;
  const size_t expected = static_cast<size_t>(config_.in_channels) * static_cast<size_t>(S * S * S);
  if (input.size() != expected) throw Error("shape_mismatch", "input size does not match network input shape");
  if (params.size() != layout_.param_count) throw Error("shape_mismatch", "parameter count mismatch");
  const bool fx = flips & 1u, fy = flips & 2u, fz = flips & 4u;

  auto load_input = [&](T* dst, int64_t P, int64_t pad) {
    for (int c = 0; c < config_.in_channels; ++c)
      for (int64_t z = 0; z < S; ++z)
        for (int64_t y = 0; y < S; ++y)
          for (int64_t x = 0; x < S; ++x) {
            const int64_t sx = flip_coord(x, S, fx), sy = flip_coord(y, S, fy), sz = flip_coord(z, S, fz);
            dst[static_cast<size_t>(c) * static_cast<size_t>(P * P * P) + static_cast<size_t>((x + pad) + P * ((y + pad) + P * (z + pad)))] =
                static_cast<T>(input[static_cast<size_t>(c) * static_cast<size_t>(S * S * S) + static_cast<size_t>(sx + S * (sy + S * sz))]);
          }
  };

  if (layout_.conv.empty()) {
    load_input(ws.fc_in[0].data(), S, 0);
  } else {
    load_input(ws.in_pad[0].data(), layout_.conv[0].padded, layout_.conv[0].pad);
  }

  for (size_t l = 0; l < layout_.conv.size(); ++l) {
    const auto& c = layout_.conv[l];
    const int64_t P = c.padded, P3 = P * P * P, k = c.kernel, pad = c.pad;
    const Span sp = interior_span(c);
    const T* W = params.data() + c.w_offset;
    const T* B = params.data() + c.b_offset;
    for (int co = 0; co < c.cout; ++co) {
      T* acc = ws.pre[l].data() + static_cast<size_t>(co) * static_cast<size_t>(P3);
      std::fill(acc + sp.first, acc + sp.first + sp.len, B[co]);
      for (int ci = 0; ci < c.cin; ++ci) {
        const T* in = ws.in_pad[l].data() + static_cast<size_t>(ci) * static_cast<size_t>(P3);
        const T* w = W + (static_cast<size_t>(co) * static_cast<size_t>(c.cin) + static_cast<size_t>(ci)) * static_cast<size_t>(k * k * k);
        int t = 0;
        for (int64_t dz = -pad; dz <= pad; ++dz)
          for (int64_t dy = -pad; dy <= pad; ++dy)
            for (int64_t dx = -pad; dx <= pad; ++dx, ++t)
              axpy(acc + sp.first, in + sp.first + tap_offset(dx, dy, dz, P), w[t], sp.len);
      }
    }
    // ReLU + max pool into the next layer's input.
    const bool last = l + 1 == layout_.conv.size();
    const int64_t Q = c.pooled, pool = c.pool;
    T* next = last ? ws.fc_in[0].data() : ws.in_pad[l + 1].data();
    const int64_t nP = last ? Q : layout_.conv[l + 1].padded;
    const int64_t npad = last ? 0 : layout_.conv[l + 1].pad;
    for (int co = 0; co < c.cout; ++co) {
      const T* pre = ws.pre[l].data() + static_cast<size_t>(co) * static_cast<size_t>(P3);
      for (int64_t oz = 0; oz < Q; ++oz)
        for (int64_t oy = 0; oy < Q; ++oy)
          for (int64_t ox = 0; ox < Q; ++ox) {
            uint32_t best_i = 0;
            T best = T{};
            bool first = true;
            for (int64_t dz = 0; dz < pool; ++dz)
              for (int64_t dy = 0; dy < pool; ++dy)
                for (int64_t dx = 0; dx < pool; ++dx) {
                  const int64_t i = (ox * pool + dx + pad) + P * ((oy * pool + dy + pad) + P * (oz * pool + dz + pad));
                  const T v = std::max(pre[i], T{});
                  if (first || v > best) {
                    best = v;
                    best_i = static_cast<uint32_t>(i);
                    first = false;
                  }
                }
            ws.argmax[l][static_cast<size_t>(co) * static_cast<size_t>(Q * Q * Q) + static_cast<size_t>(ox + Q * (oy + Q * oz))] = best_i;
            next[static_cast<size_t>(co) * static_cast<size_t>(nP * nP * nP) + static_cast<size_t>((ox + npad) + nP * ((oy + npad) + nP * (oz + npad)))] = best;
          }
    }
  }

  T out = 0;
  for (size_t l = 0; l < layout_.fc.size(); ++l) {
    const auto& f = layout_.fc[l];
    const T* W = params.data() + f.w_offset;
    const T* B = params.data() + f.b_offset;
    const T* x = ws.fc_in[l].data();
    for (int o = 0; o < f.out; ++o) {
      const T z = B[o] + dot(W + static_cast<size_t>(o) * static_cast<size_t>(f.in), x, f.in);
      ws.fc_pre[l][static_cast<size_t>(o)] = z;
      if (l + 1 < layout_.fc.size()) ws.fc_in[l + 1][static_cast<size_t>(o)] = f.relu ? std::max(z, T{}) : z;
      else out = z;
    }
  }
  return out;
}

template <class T>
void CnnNet<T>::backward(std::span<const T> params, T d_logit, Workspace& ws, std::span<T> grad) const {
  // FC layers, last to first. d_vec_a holds d(loss)/d(pre-activation).
  std::vector<T>& dz = ws.d_vec_a;
  std::vector<T>& dx = ws.d_vec_b;
  dz[0] = d_logit;
  for (size_t li = layout_.fc.size(); li-- > 0;) {
    const auto& f = layout_.fc[li];
    const T* W = params.data() + f.w_offset;
    T* gW = grad.data() + f.w_offset;
    T* gB = grad.data() + f.b_offset;
    const T* x = ws.fc_in[li].data();
    std::fill(dx.begin(), dx.begin() + f.in, T{});
    for (int o = 0; o < f.out; ++o) {
      const T d = dz[static_cast<size_t>(o)];
      if (d == T{}) continue;
      gB[o] += d;
      axpy(gW + static_cast<size_t>(o) * static_cast<size_t>(f.in), x, d, f.in);
      axpy(dx.data(), W + static_cast<size_t>(o) * static_cast<size_t>(f.in), d, f.in);
    }
    if (li > 0) {
      const auto& prev = layout_.fc[li - 1];
      for (int i = 0; i < f.in; ++i) {
        const size_t ii = static_cast<size_t>(i);
        dz[ii] = (prev.relu && ws.fc_pre[li - 1][ii] <= T{}) ? T{} : dx[ii];
      }
    }
  }
  // dx now holds d(loss)/d(flattened conv output).
  for (size_t l = layout_.conv.size(); l-- > 0;) {
    const auto& c = layout_.conv[l];
    const int64_t P = c.padded, P3 = P * P * P, k = c.kernel, pad = c.pad, Q = c.pooled;
    const Span sp = interior_span(c);
    const bool last = l + 1 == layout_.conv.size();
    const T* d_out = last ? dx.data() : ws.d_in_pad[l + 1].data();
    const int64_t nP = last ? Q : layout_.conv[l + 1].padded;
    const int64_t npad = last ? 0 : layout_.conv[l + 1].pad;
    auto& d_pre = ws.d_pre[l];
    std::fill(d_pre.begin(), d_pre.end(), T{});
    for (int co = 0; co < c.cout; ++co) {
      const T* pre = ws.pre[l].data() + static_cast<size_t>(co) * static_cast<size_t>(P3);
      T* dp = d_pre.data() + static_cast<size_t>(co) * static_cast<size_t>(P3);
      for (int64_t oz = 0; oz < Q; ++oz)
        for (int64_t oy = 0; oy < Q; ++oy)
          for (int64_t ox = 0; ox < Q; ++ox) {
            const uint32_t i = ws.argmax[l][static_cast<size_t>(co) * static_cast<size_t>(Q * Q * Q) + static_cast<size_t>(ox + Q * (oy + Q * oz))];
            if (pre[i] <= T{}) continue;
            dp[i] += d_out[static_cast<size_t>(co) * static_cast<size_t>(nP * nP * nP) + static_cast<size_t>((ox + npad) + nP * ((oy + npad) + nP * (oz + npad)))];
          }
    }
    const T* W = params.data() + c.w_offset;
    T* gW = grad.data() + c.w_offset;
    T* gB = grad.data() + c.b_offset;
    const bool need_input_grad = l > 0;
    if (need_input_grad) std::fill(ws.d_in_pad[l].begin(), ws.d_in_pad[l].end(), T{});
    for (int co = 0; co < c.cout; ++co) {
      const T* dp = d_pre.data() + static_cast<size_t>(co) * static_cast<size_t>(P3);
      T bsum = 0;
      for (int64_t i = 0; i < P3; ++i) bsum += dp[i];
      gB[co] += bsum;
      for (int ci = 0; ci < c.cin; ++ci) {
        const T* in = ws.in_pad[l].data() + static_cast<size_t>(ci) * static_cast<size_t>(P3);
        T* din = need_input_grad ? ws.d_in_pad[l].data() + static_cast<size_t>(ci) * static_cast<size_t>(P3) : nullptr;
        const size_t wbase = (static_cast<size_t>(co) * static_cast<size_t>(c.cin) + static_cast<size_t>(ci)) * static_cast<size_t>(k * k * k);
        int t = 0;
        for (int64_t dz_ = -pad; dz_ <= pad; ++dz_)
          for (int64_t dy = -pad; dy <= pad; ++dy)
            for (int64_t dx_ = -pad; dx_ <= pad; ++dx_, ++t) {
              const int64_t off = tap_offset(dx_, dy, dz_, P);
              gW[wbase + static_cast<size_t>(t)] += dot(dp + sp.first, in + sp.first + off, sp.len);
              if (din) axpy(din + sp.first + off, dp + sp.first, W[wbase + static_cast<size_t>(t)], sp.len);
            }
      }
    }
    // Padding positions of d_in_pad are ignored by the layer below.
  }
}

template <class T>
T CnnNet<T>::loss_and_grad(std::span<const T> params, std::span<const float> input, T label, Workspace& ws,
                           std::span<T> grad, FlipMask flips) const {
  const T z = logit(params, input, ws, flips);
  const T loss = static_cast<T>(bce_with_logit(static_cast<double>(z), static_cast<double>(label)));
  const T d = static_cast<T>(sigmoid(static_cast<double>(z))) - label;
  backward(params, d, ws, grad);
  return loss;
}

template <class T>
std::vector<T> CnnNet<T>::init_params(uint64_t seed) const {
  std::vector<T> p(layout_.param_count, T{});
  Rng rng(seed);
  for (const auto& c : layout_.conv) {
    const size_t n = static_cast<size_t>(c.cout) * static_cast<size_t>(c.cin) * static_cast<size_t>(c.kernel * c.kernel * c.kernel);
    const double scale = std::sqrt(2.0 / static_cast<double>(static_cast<size_t>(c.cin) * static_cast<size_t>(c.kernel * c.kernel * c.kernel)));
    for (size_t i = 0; i < n; ++i) p[c.w_offset + i] = static_cast<T>(scale * rng.normal());
  }
  for (const auto& f : layout_.fc) {
    const size_t n = static_cast<size_t>(f.in) * static_cast<size_t>(f.out);
    const double scale = std::sqrt((f.relu ? 2.0 : 1.0) / static_cast<double>(f.in));
    for (size_t i = 0; i < n; ++i) p[f.w_offset + i] = static_cast<T>(scale * rng.normal());
  }
  return p;
}

template class CnnNet<float>;
template class CnnNet<double>;

float cnn_forward(const CnnModel& model, const EvidenceTensor& t) {
  if (t.edge != model.config.input_edge) throw Error("shape_mismatch", "evidence edge does not match model input_edge");
  const CnnNet<float> net(model.config);
  auto ws = net.make_workspace();
  return static_cast<float>(sigmoid(net.logit(model.params, t.data, ws)));
}

std::vector<float> cnn_forward_batch(const CnnModel& model, std::span<const EvidenceTensor* const> tensors) {
  const CnnNet<float> net(model.config);
  for (const auto* t : tensors)
    if (t->edge != model.config.input_edge) throw Error("shape_mismatch", "evidence edge does not match model input_edge");
  std::vector<float> out(tensors.size());
  const size_t chunks = std::min<size_t>(thread_count(), std::max<size_t>(1, tensors.size()));
  parallel_for(chunks, [&](size_t ch) {
    auto ws = net.make_workspace();
    for (size_t i = ch; i < tensors.size(); i += chunks)
      out[i] = static_cast<float>(sigmoid(net.logit(model.params, tensors[i]->data, ws)));
  });
  return out;
}

double cnn_mean_loss(const CnnModel& model, const std::vector<LabeledTensor>& dataset) {
  std::vector<const EvidenceTensor*> ts;
  for (const auto& d : dataset) ts.push_back(d.tensor);
  const CnnNet<float> net(model.config);
  std::vector<double> losses(dataset.size());
  const size_t chunks = std::min<size_t>(thread_count(), std::max<size_t>(1, dataset.size()));
  parallel_for(chunks, [&](size_t ch) {
    auto ws = net.make_workspace();
    for (size_t i = ch; i < dataset.size(); i += chunks)
      losses[i] = bce_with_logit(net.logit(model.params, dataset[i].tensor->data, ws), dataset[i].label);
  });
  double s = 0;
  for (double l : losses) s += l;
  return dataset.empty() ? 0.0 : s / static_cast<double>(dataset.size());
}

CnnTrainResult cnn_train(const CnnConfig& config, const std::vector<LabeledTensor>& dataset, const TrainHyper& hyper,
                         bool verbose) {
  if (dataset.empty()) throw Error("invalid_argument", "training dataset is empty");
  if (hyper.batch < 1 || hyper.epochs < 0) throw Error("invalid_argument", "bad training hyperparameters");
  for (const auto& d : dataset) {
    if (d.label != 0 && d.label != 1) throw Error("invalid_argument", "labels must be 0 or 1");
    if (d.tensor->edge != config.input_edge) throw Error("shape_mismatch", "evidence edge does not match input_edge");
  }
  const CnnNet<float> net(config);
  CnnTrainResult result;
  result.model.config = config;
  result.model.params = net.init_params(derive_seed(config.seed, "cnn-init"));
  auto& params = result.model.params;
  std::vector<float> velocity(params.size(), 0.f), grad(params.size(), 0.f);
  const size_t batch = static_cast<size_t>(hyper.batch);
  std::vector<typename CnnNet<float>::Workspace> workspaces;
  for (size_t i = 0; i < std::min(batch, dataset.size()); ++i) workspaces.push_back(net.make_workspace());
  std::vector<std::vector<float>> ex_grad(workspaces.size(), std::vector<float>(params.size(), 0.f));
  std::vector<double> ex_loss(workspaces.size(), 0.0);

  result.initial_loss = cnn_mean_loss(result.model, dataset);
  Rng rng(derive_seed(config.seed, "cnn-shuffle"));
  std::vector<size_t> order(dataset.size());
  std::vector<FlipMask> flips(dataset.size(), 0);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
    if (config.flips)
      for (auto& f : flips) f = static_cast<FlipMask>(rng.below(8));
    double epoch_loss = 0;
    size_t batches = 0;
    for (size_t start = 0; start < order.size(); start += batch) {
      const size_t n = std::min(batch, order.size() - start);
      parallel_for(n, [&](size_t k) {
        std::fill(ex_grad[k].begin(), ex_grad[k].end(), 0.f);
        const auto& ex = dataset[order[start + k]];
        ex_loss[k] = net.loss_and_grad(params, ex.tensor->data, static_cast<float>(ex.label), workspaces[k], ex_grad[k],
                                       flips[order[start + k]]);
      });
      // Fixed example order keeps the reduction deterministic.
      std::fill(grad.begin(), grad.end(), 0.f);
      double batch_loss = 0;
      for (size_t k = 0; k < n; ++k) {
        batch_loss += ex_loss[k];
        const float* g = ex_grad[k].data();
        for (size_t j = 0; j < grad.size(); ++j) grad[j] += g[j];
      }
      batch_loss /= static_cast<double>(n);
      if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << " batch " << batches;
        throw Error("nan_loss", msg.str());
      }
      const float inv = 1.0f / static_cast<float>(n);
      const float mu = static_cast<float>(hyper.momentum), lr = static_cast<float>(hyper.lr);
      for (size_t j = 0; j < params.size(); ++j) {
        velocity[j] = mu * velocity[j] + grad[j] * inv;
        params[j] -= lr * velocity[j];
      }
      epoch_loss += batch_loss;
      ++batches;
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    result.epoch_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (verbose) {
      std::ostringstream msg;
      msg << "epoch " << epoch + 1 << "/" << hyper.epochs << " loss " << result.epoch_loss.back() << " ("
          << result.epoch_seconds.back() << " s)";
      log_info(msg.str());
    }
  }
  return result;
}

GradCheckResult grad_check(const CnnConfig& config, const GradCheckSample& sample, std::span<const double> params_in,
                           double h) {
  const CnnNet<double> net(config);
  std::vector<double> params(params_in.begin(), params_in.end());
  auto ws = net.make_workspace();
  std::vector<double> analytic(params.size(), 0.0);
  const double y = sample.label;
  net.loss_and_grad(params, sample.input, y, ws, analytic);
  GradCheckResult r;
  for (size_t j = 0; j < params.size(); ++j) {
    const double orig = params[j];
    params[j] = orig + h;
    const double lp = bce_with_logit(net.logit(params, sample.input, ws), y);
    params[j] = orig - h;
    const double lm = bce_with_logit(net.logit(params, sample.input, ws), y);
    params[j] = orig;
    const double numeric = (lp - lm) / (2 * h);
    const double denom = std::max({std::abs(analytic[j]), std::abs(numeric), 1e-3});
    const double rel = std::abs(analytic[j] - numeric) / denom;
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_param = j;
      r.worst_analytic = analytic[j];
      r.worst_numeric = numeric;
    }
  }
  return r;
}

GradCheckResult grad_check(const CnnConfig& config, const GradCheckSample& sample, uint64_t param_seed, double h) {
  const CnnNet<double> net(config);
  const auto params = net.init_params(param_seed);
  return grad_check(config, sample, params, h);
}

}  // namespace proofkit
