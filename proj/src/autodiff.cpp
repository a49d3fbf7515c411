// SPDX-License-Identifier: Apache-2.0
#include "nlr/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace nlr {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

}  // namespace nlr

namespace nlr::ad {

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  if (records_.empty()) throw std::logic_error("backward: tape is empty");

  for (auto& r : records_) r.output->grad.assign(r.output->values.size(), T(0));

  auto* root = loss.data();
  if (root->grad.empty()) root->grad.assign(1, T(0));
  root->grad[0] = T(1);

  std::unordered_set<const TensorData<T>*> reachable{root};
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (!reachable.contains(it->output.get())) continue;
    for (auto& in : it->inputs) {
      if (!in->requires_grad) continue;
      reachable.insert(in.get());
      if (in->grad.empty()) in->grad.assign(in->values.size(), T(0));
    }
    it->backward();
  }
}

namespace {

template <typename T>
using DataPtr = std::shared_ptr<TensorData<T>>;

template <typename T>
DataPtr<T> new_output(const Tape<T>& tape, Shape shape, bool requires_grad) {
  auto d = std::make_shared<TensorData<T>>();
  d->values.assign(numel(shape), T(0));
  d->shape = std::move(shape);
  d->requires_grad = requires_grad && tape.recording();
  return d;
}

void require_same_shape(std::string_view op, const Shape& a, const Shape& b) {
  if (a != b)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                     to_string(b));
}

void require_rank(std::string_view op, const Shape& s, std::size_t rank) {
  if (s.size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(s));
}

/// Shared plumbing for unary elementwise ops: forward f(x), backward
/// dx += dy * df(x, y).
template <typename T, typename F, typename DF>
Tensor<T> unary(Tape<T>& tape, std::string_view op, const Tensor<T>& x, F f, DF df) {
  auto out = new_output<T>(tape, x.shape(), x.requires_grad());
  auto xs = x.values();
  for (std::size_t i = 0; i < xs.size(); ++i) out->values[i] = f(xs[i]);
  if (out->requires_grad) {
    auto* xd = x.data();
    auto* od = out.get();
    tape.record(op, {x.storage()}, out, [xd, od, df] {
      for (std::size_t i = 0; i < od->values.size(); ++i)
        xd->grad[i] += od->grad[i] * df(xd->values[i], od->values[i]);
    });
  }
  return Tensor<T>(out);
}

}  // namespace

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.shape(), b.shape());
  auto out = new_output<T>(tape, a.shape(), a.requires_grad() || b.requires_grad());
  for (std::size_t i = 0; i < a.size(); ++i) out->values[i] = a.values()[i] + b.values()[i];
  if (out->requires_grad) {
    auto *ad = a.data(), *bd = b.data(), *od = out.get();
    tape.record("add", {a.storage(), b.storage()}, out, [ad, bd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += od->grad[i];
        if (bd->requires_grad) bd->grad[i] += od->grad[i];
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a.shape(), b.shape());
  auto out = new_output<T>(tape, a.shape(), a.requires_grad() || b.requires_grad());
  for (std::size_t i = 0; i < a.size(); ++i) out->values[i] = a.values()[i] - b.values()[i];
  if (out->requires_grad) {
    auto *ad = a.data(), *bd = b.data(), *od = out.get();
    tape.record("sub", {a.storage(), b.storage()}, out, [ad, bd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += od->grad[i];
        if (bd->requires_grad) bd->grad[i] -= od->grad[i];
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a.shape(), b.shape());
  auto out = new_output<T>(tape, a.shape(), a.requires_grad() || b.requires_grad());
  for (std::size_t i = 0; i < a.size(); ++i) out->values[i] = a.values()[i] * b.values()[i];
  if (out->requires_grad) {
    auto *ad = a.data(), *bd = b.data(), *od = out.get();
    tape.record("mul", {a.storage(), b.storage()}, out, [ad, bd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        if (ad->requires_grad) ad->grad[i] += od->grad[i] * bd->values[i];
        if (bd->requires_grad) bd->grad[i] += od->grad[i] * ad->values[i];
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  return unary(
      tape, "scale", a, [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& a, T c) {
  return unary(
      tape, "add_scalar", a, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> add_row(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank("add_row", x.shape(), 2);
  require_rank("add_row", bias.shape(), 1);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (bias.dim(0) != n)
    throw ShapeError("add_row: bias " + to_string(bias.shape()) + " does not match columns of " +
                     to_string(x.shape()));
  auto out = new_output<T>(tape, x.shape(), x.requires_grad() || bias.requires_grad());
  auto xs = x.values();
  auto bs = bias.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->values[i * n + j] = xs[i * n + j] + bs[j];
  if (out->requires_grad) {
    auto *xd = x.data(), *bd = bias.data(), *od = out.get();
    tape.record("add_row", {x.storage(), bias.storage()}, out, [xd, bd, od, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = od->grad[i * n + j];
          if (xd->requires_grad) xd->grad[i * n + j] += g;
          if (bd->requires_grad) bd->grad[j] += g;
        }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_rank("matmul", a.shape(), 2);
  require_rank("matmul", b.shape(), 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  auto out = new_output<T>(tape, {m, n}, a.requires_grad() || b.requires_grad());
  const T* A = a.values().data();
  const T* B = b.values().data();
  T* C = out->values.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      const T* brow = B + p * n;
      T* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  if (out->requires_grad) {
    auto *ad = a.data(), *bd = b.data(), *od = out.get();
    tape.record("matmul", {a.storage(), b.storage()}, out, [ad, bd, od, m, k, n] {
      const T* G = od->grad.data();
      if (ad->requires_grad) {
        const T* Bv = bd->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            T acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * Bv[p * n + j];
            ad->grad[i * k + p] += acc;
          }
      }
      if (bd->requires_grad) {
        const T* Av = ad->values.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const T av = Av[i * k + p];
            T* gb = bd->grad.data() + p * n;
            const T* grow = G + i * n;
            for (std::size_t j = 0; j < n; ++j) gb[j] += av * grow[j];
          }
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(Tape<T>& tape, const Tensor<T>& x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!(x.values()[i] > T(0)))
      throw DomainError("log: non-positive argument " + std::to_string(x.values()[i]) +
                        " at index " + std::to_string(i));
  return unary(
      tape, "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> clamped_log(Tape<T>& tape, const Tensor<T>& x, T lo, T hi) {
  if (!(lo > T(0)) || !(hi >= lo)) throw DomainError("clamped_log: invalid clamp range");
  return unary(
      tape, "clamped_log", x, [lo, hi](T v) { return std::log(std::clamp(v, lo, hi)); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1) / v; });
}

template <typename T>
Tensor<T> square(Tape<T>& tape, const Tensor<T>& x) {
  return unary(
      tape, "square", x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x) {
  require_rank("softmax", x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = new_output<T>(tape, x.shape(), x.requires_grad());
  auto xs = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xs.data() + i * n;
    T* o = out->values.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) o[j] /= z;
  }
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("softmax", {x.storage()}, out, [xd, od, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        const T* y = od->values.data() + i * n;
        const T* gy = od->grad.data() + i * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[j] * y[j];
        for (std::size_t j = 0; j < n; ++j) xd->grad[i * n + j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> log_softmax(Tape<T>& tape, const Tensor<T>& x) {
  require_rank("log_softmax", x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  auto out = new_output<T>(tape, x.shape(), x.requires_grad());
  auto xs = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const T* row = xs.data() + i * n;
    T* o = out->values.data() + i * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(row[j] - mx);
    const T lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) o[j] = row[j] - lz;
  }
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("log_softmax", {x.storage()}, out, [xd, od, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        const T* y = od->values.data() + i * n;
        const T* gy = od->grad.data() + i * n;
        T gsum = 0;
        for (std::size_t j = 0; j < n; ++j) gsum += gy[j];
        for (std::size_t j = 0; j < n; ++j) xd->grad[i * n + j] += gy[j] - std::exp(y[j]) * gsum;
      }
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  auto out = new_output<T>(tape, {1}, x.requires_grad());
  T acc = 0;
  for (T v : x.values()) acc += v;
  out->values[0] = acc;
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("sum", {x.storage()}, out, [xd, od] {
      for (auto& g : xd->grad) g += od->grad[0];
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  auto out = new_output<T>(tape, {1}, x.requires_grad());
  T acc = 0;
  for (T v : x.values()) acc += v;
  const T inv = T(1) / static_cast<T>(x.size());
  out->values[0] = acc * inv;
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("mean", {x.storage()}, out, [xd, od, inv] {
      for (auto& g : xd->grad) g += od->grad[0] * inv;
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean_rows(Tape<T>& tape, const Tensor<T>& x) {
  require_rank("mean_rows", x.shape(), 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (m == 0) throw ShapeError("mean_rows: no rows");
  auto out = new_output<T>(tape, {n}, x.requires_grad());
  const T inv = T(1) / static_cast<T>(m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out->values[j] += x.values()[i * n + j];
  for (auto& v : out->values) v *= inv;
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("mean_rows", {x.storage()}, out, [xd, od, m, n, inv] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) xd->grad[i * n + j] += od->grad[j] * inv;
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  auto out = new_output<T>(tape, std::move(shape), x.requires_grad());
  std::copy(x.values().begin(), x.values().end(), out->values.begin());
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("reshape", {x.storage()}, out, [xd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) xd->grad[i] += od->grad[i];
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.clone();
}

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dAttrs attrs) {
  require_rank("conv2d", x.shape(), 4);
  require_rank("conv2d", w.shape(), 4);
  require_rank("conv2d", bias.shape(), 1);
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t s = attrs.stride, p = attrs.padding;
  if (w.dim(1) != Ci || bias.dim(0) != Co)
    throw ShapeError("conv2d: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()) + ", bias " + to_string(bias.shape()) +
                     " are inconsistent");
  if (s == 0 || H + 2 * p < kh || W + 2 * p < kw)
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " does not fit input " +
                     to_string(x.shape()));
  const std::size_t Ho = (H + 2 * p - kh) / s + 1, Wo = (W + 2 * p - kw) / s + 1;
  auto out = new_output<T>(tape, {B, Co, Ho, Wo},
                           x.requires_grad() || w.requires_grad() || bias.requires_grad());

  // Visits every (input pixel, weight, output pixel) triple once.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t ci = 0; ci < Ci; ++ci)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const std::size_t wi = ((co * Ci + ci) * kh + u) * kw + v;
              for (std::size_t oh = 0; oh < Ho; ++oh) {
                const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * s + u) -
                                          static_cast<std::ptrdiff_t>(p);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                  const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * s + v) -
                                            static_cast<std::ptrdiff_t>(p);
                  if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t xi = ((b * Ci + ci) * H + ih) * W + iw;
                  const std::size_t oi = ((b * Co + co) * Ho + oh) * Wo + ow;
                  fn(xi, wi, oi);
                }
              }
            }
  };

  const T* xv = x.values().data();
  const T* wv = w.values().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      std::fill_n(out->values.begin() + static_cast<std::ptrdiff_t>((b * Co + co) * Ho * Wo),
                  Ho * Wo, bias.values()[co]);
  for_each_tap([&](std::size_t xi, std::size_t wi, std::size_t oi) {
    out->values[oi] += xv[xi] * wv[wi];
  });

  if (out->requires_grad) {
    auto *xd = x.data(), *wd = w.data(), *bd = bias.data(), *od = out.get();
    tape.record("conv2d", {x.storage(), w.storage(), bias.storage()}, out,
                [=] {
                  for_each_tap([&](std::size_t xi, std::size_t wi, std::size_t oi) {
                    const T g = od->grad[oi];
                    if (xd->requires_grad) xd->grad[xi] += g * wd->values[wi];
                    if (wd->requires_grad) wd->grad[wi] += g * xd->values[xi];
                  });
                  if (bd->requires_grad)
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t co = 0; co < Co; ++co)
                        for (std::size_t i = 0; i < Ho * Wo; ++i)
                          bd->grad[co] += od->grad[(b * Co + co) * Ho * Wo + i];
                });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv_transpose2d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w,
                           const Tensor<T>& bias, Conv2dAttrs attrs) {
  require_rank("conv_transpose2d", x.shape(), 4);
  require_rank("conv_transpose2d", w.shape(), 4);
  require_rank("conv_transpose2d", bias.shape(), 1);
  const std::size_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t s = attrs.stride, p = attrs.padding;
  if (w.dim(0) != Ci || bias.dim(0) != Co)
    throw ShapeError("conv_transpose2d: input " + to_string(x.shape()) + ", weight " +
                     to_string(w.shape()) + ", bias " + to_string(bias.shape()) +
                     " are inconsistent");
  if (s == 0 || (H - 1) * s + kh <= 2 * p || (W - 1) * s + kw <= 2 * p)
    throw ShapeError("conv_transpose2d: padding too large for input " + to_string(x.shape()));
  const std::size_t Ho = (H - 1) * s + kh - 2 * p, Wo = (W - 1) * s + kw - 2 * p;
  auto out = new_output<T>(tape, {B, Co, Ho, Wo},
                           x.requires_grad() || w.requires_grad() || bias.requires_grad());

  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t co = 0; co < Co; ++co)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v) {
              const std::size_t wi = ((ci * Co + co) * kh + u) * kw + v;
              for (std::size_t ih = 0; ih < H; ++ih) {
                const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(ih * s + u) -
                                          static_cast<std::ptrdiff_t>(p);
                if (oh < 0 || oh >= static_cast<std::ptrdiff_t>(Ho)) continue;
                for (std::size_t iw = 0; iw < W; ++iw) {
                  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(iw * s + v) -
                                            static_cast<std::ptrdiff_t>(p);
                  if (ow < 0 || ow >= static_cast<std::ptrdiff_t>(Wo)) continue;
                  const std::size_t xi = ((b * Ci + ci) * H + ih) * W + iw;
                  const std::size_t oi = ((b * Co + co) * Ho + oh) * Wo + ow;
                  fn(xi, wi, oi);
                }
              }
            }
  };

  const T* xv = x.values().data();
  const T* wv = w.values().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < Co; ++co)
      std::fill_n(out->values.begin() + static_cast<std::ptrdiff_t>((b * Co + co) * Ho * Wo),
                  Ho * Wo, bias.values()[co]);
  for_each_tap([&](std::size_t xi, std::size_t wi, std::size_t oi) {
    out->values[oi] += xv[xi] * wv[wi];
  });

  if (out->requires_grad) {
    auto *xd = x.data(), *wd = w.data(), *bd = bias.data(), *od = out.get();
    tape.record("conv_transpose2d", {x.storage(), w.storage(), bias.storage()}, out, [=] {
      for_each_tap([&](std::size_t xi, std::size_t wi, std::size_t oi) {
        const T g = od->grad[oi];
        if (xd->requires_grad) xd->grad[xi] += g * wd->values[wi];
        if (wd->requires_grad) wd->grad[wi] += g * xd->values[xi];
      });
      if (bd->requires_grad)
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t co = 0; co < Co; ++co)
            for (std::size_t i = 0; i < Ho * Wo; ++i)
              bd->grad[co] += od->grad[(b * Co + co) * Ho * Wo + i];
    });
  }
  return Tensor<T>(out);
}

namespace {

template <typename T>
void check_pool(std::string_view op, const Tensor<T>& x, std::size_t k) {
  require_rank(op, x.shape(), 4);
  if (k == 0 || x.dim(2) % k != 0 || x.dim(3) % k != 0)
    throw ShapeError(std::string(op) + ": window " + std::to_string(k) +
                     " does not tile input " + to_string(x.shape()));
}

}  // namespace

template <typename T>
Tensor<T> max_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t k) {
  check_pool("max_pool2d", x, k);
  const std::size_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  auto out = new_output<T>(tape, {x.dim(0), x.dim(1), Ho, Wo}, x.requires_grad());
  std::vector<std::size_t> argmax(out->values.size());
  auto xs = x.values();
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        std::size_t best = (c * H + oh * k) * W + ow * k;
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v) {
            const std::size_t idx = (c * H + oh * k + u) * W + ow * k + v;
            if (xs[idx] > xs[best]) best = idx;
          }
        const std::size_t oi = (c * Ho + oh) * Wo + ow;
        out->values[oi] = xs[best];
        argmax[oi] = best;
      }
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("max_pool2d", {x.storage()}, out, [xd, od, argmax = std::move(argmax)] {
      for (std::size_t i = 0; i < argmax.size(); ++i) xd->grad[argmax[i]] += od->grad[i];
    });
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> avg_pool2d(Tape<T>& tape, const Tensor<T>& x, std::size_t k) {
  check_pool("avg_pool2d", x, k);
  const std::size_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  const T inv = T(1) / static_cast<T>(k * k);
  auto out = new_output<T>(tape, {x.dim(0), x.dim(1), Ho, Wo}, x.requires_grad());
  auto xs = x.values();
  auto window = [=](std::size_t c, std::size_t oh, std::size_t ow, auto&& fn) {
    for (std::size_t u = 0; u < k; ++u)
      for (std::size_t v = 0; v < k; ++v) fn((c * H + oh * k + u) * W + ow * k + v);
  };
  for (std::size_t c = 0; c < BC; ++c)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        T acc = 0;
        window(c, oh, ow, [&](std::size_t idx) { acc += xs[idx]; });
        out->values[(c * Ho + oh) * Wo + ow] = acc * inv;
      }
  if (out->requires_grad) {
    auto *xd = x.data(), *od = out.get();
    tape.record("avg_pool2d", {x.storage()}, out, [=] {
      for (std::size_t c = 0; c < BC; ++c)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            const T g = od->grad[(c * Ho + oh) * Wo + ow] * inv;
            window(c, oh, ow, [&](std::size_t idx) { xd->grad[idx] += g; });
          }
    });
  }
  return Tensor<T>(out);
}

#define NLR_INSTANTIATE_AD(T)                                                                  \
  template class Tape<T>;                                                                      \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                     \
  template Tensor<T> add_scalar(Tape<T>&, const Tensor<T>&, T);                                \
  template Tensor<T> add_row(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                         \
  template Tensor<T> sigmoid(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> exp(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> log(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> clamped_log(Tape<T>&, const Tensor<T>&, T, T);                            \
  template Tensor<T> square(Tape<T>&, const Tensor<T>&);                                       \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&);                                      \
  template Tensor<T> log_softmax(Tape<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                         \
  template Tensor<T> mean_rows(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                               \
  template Tensor<T> detach(const Tensor<T>&);                                                 \
  template Tensor<T> conv2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                            Conv2dAttrs);                                                      \
  template Tensor<T> conv_transpose2d(Tape<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                      const Tensor<T>&, Conv2dAttrs);                          \
  template Tensor<T> max_pool2d(Tape<T>&, const Tensor<T>&, std::size_t);                      \
  template Tensor<T> avg_pool2d(Tape<T>&, const Tensor<T>&, std::size_t);

NLR_INSTANTIATE_AD(float)
NLR_INSTANTIATE_AD(double)

}  // namespace nlr::ad
