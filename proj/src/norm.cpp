#include <cmath>

#include "arfc/ops.hpp"

namespace arfc {

namespace {

template <typename T>
void require_affine(const Tensor<T>& p, int c, const char* what)
{
    if (p.shape() != Shape{1, c, 1, 1})
        throw DimensionError(std::string(what) + " has shape " + p.shape().str() + ", expected (1, " +
                             std::to_string(c) + ", 1, 1)");
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, double momentum, double eps)
{
    const Shape s = x.shape();
    require_affine(gamma, s.c, "batch_norm gamma");
    require_affine(beta, s.c, "batch_norm beta");
    require_affine(running_mean, s.c, "batch_norm running_mean");
    require_affine(running_var, s.c, "batch_norm running_var");
    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.n) * plane;
    if (training && count < 2)
        throw ConfigError("batch_norm in training mode needs at least 2 values per channel, got " +
                          std::to_string(count));

    std::vector<T> mean(s.c), invstd(s.c);
    for (int c = 0; c < s.c; ++c) {
        if (training) {
            double acc = 0;
            for (int n = 0; n < s.n; ++n) {
                const T* v = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t p = 0; p < plane; ++p)
                    acc += v[p];
            }
            const double m = acc / count;
            double sq = 0;
            for (int n = 0; n < s.n; ++n) {
                const T* v = x.ptr() + (static_cast<std::size_t>(n) * s.c + c) * plane;
                for (std::size_t p = 0; p < plane; ++p)
                    sq += (v[p] - m) * (v[p] - m);
            }
            const double var = sq / count;
            mean[c] = static_cast<T>(m);
            invstd[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
            T& rm = running_mean.ptr_mut()[c];
            T& rv = running_var.ptr_mut()[c];
            rm = static_cast<T>(momentum * rm + (1 - momentum) * m);
            rv = static_cast<T>(momentum * rv + (1 - momentum) * (sq / (count - 1)));
        } else {
            mean[c] = running_mean.ptr()[c];
            invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.ptr()[c]) + eps));
        }
    }

    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
            const T g = gamma.ptr()[c];
            const T b = beta.ptr()[c];
            for (std::size_t p = 0; p < plane; ++p)
                out.ptr_mut()[base + p] = (x.ptr()[base + p] - mean[c]) * invstd[c] * g + b;
        }
    detail::check_finite<T>(out.data(), "batch_norm");

    if (detail::needs_grad<T>({&x, &gamma, &beta})) {
        detail::record<T>(out, "batch_norm", {x, gamma, beta}, [x, gamma, beta, s, plane, count, mean, invstd,
                                                                training](const detail::TensorImpl<T>& res) {
            T* dx = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
            T* dg = gamma.requires_grad() ? detail::grad_of(gamma).data() : nullptr;
            T* db = beta.requires_grad() ? detail::grad_of(beta).data() : nullptr;
            for (int c = 0; c < s.c; ++c) {
                double sum_dy = 0;
                double sum_dy_xhat = 0;
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        const double xhat = (x.ptr()[base + p] - mean[c]) * invstd[c];
                        sum_dy += res.grad[base + p];
                        sum_dy_xhat += res.grad[base + p] * xhat;
                    }
                }
                if (dg)
                    dg[c] += static_cast<T>(sum_dy_xhat);
                if (db)
                    db[c] += static_cast<T>(sum_dy);
                if (!dx)
                    continue;
                const double g = gamma.ptr()[c];
                for (int n = 0; n < s.n; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
                    for (std::size_t p = 0; p < plane; ++p) {
                        if (training) {
                            const double xhat = (x.ptr()[base + p] - mean[c]) * invstd[c];
                            dx[base + p] += static_cast<T>(
                                g * invstd[c] * (res.grad[base + p] - sum_dy / count - xhat * sum_dy_xhat / count));
                        } else {
                            dx[base + p] += static_cast<T>(g * invstd[c] * res.grad[base + p]);
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps)
{
    const Shape s = x.shape();
    require_affine(gamma, s.c, "layer_norm gamma");
    require_affine(beta, s.c, "layer_norm beta");
    const std::size_t plane = s.plane();
    const std::size_t count = static_cast<std::size_t>(s.c) * plane;
    if (count < 1)
        throw DimensionError("layer_norm: empty sample");
    std::vector<T> mean(s.n), invstd(s.n);
    Tensor<T> out(s);
    for (int n = 0; n < s.n; ++n) {
        const T* v = x.ptr() + n * count;
        double acc = 0;
        for (std::size_t i = 0; i < count; ++i)
            acc += v[i];
        const double m = acc / count;
        double sq = 0;
        for (std::size_t i = 0; i < count; ++i)
            sq += (v[i] - m) * (v[i] - m);
        mean[n] = static_cast<T>(m);
        invstd[n] = static_cast<T>(1.0 / std::sqrt(sq / count + eps));
        T* o = out.ptr_mut() + n * count;
        for (int c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t i = c * plane + p;
                o[i] = (v[i] - mean[n]) * invstd[n] * gamma.ptr()[c] + beta.ptr()[c];
            }
    }
    detail::check_finite<T>(out.data(), "layer_norm");

    if (detail::needs_grad<T>({&x, &gamma, &beta})) {
        detail::record<T>(out, "layer_norm", {x, gamma, beta},
                          [x, gamma, beta, s, plane, count, mean, invstd](const detail::TensorImpl<T>& res) {
                              T* dx = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
                              T* dg = gamma.requires_grad() ? detail::grad_of(gamma).data() : nullptr;
                              T* db = beta.requires_grad() ? detail::grad_of(beta).data() : nullptr;
                              for (int n = 0; n < s.n; ++n) {
                                  const T* v = x.ptr() + n * count;
                                  const T* gy = res.grad.data() + n * count;
                                  double sum_dxhat = 0;
                                  double sum_dxhat_xhat = 0;
                                  for (int c = 0; c < s.c; ++c) {
                                      const double g = gamma.ptr()[c];
                                      double sum_dy = 0;
                                      double sum_dy_xhat = 0;
                                      for (std::size_t p = 0; p < plane; ++p) {
                                          const std::size_t i = c * plane + p;
                                          const double xhat = (v[i] - mean[n]) * invstd[n];
                                          sum_dy += gy[i];
                                          sum_dy_xhat += gy[i] * xhat;
                                      }
                                      sum_dxhat += g * sum_dy;
                                      sum_dxhat_xhat += g * sum_dy_xhat;
                                      if (dg)
                                          dg[c] += static_cast<T>(sum_dy_xhat);
                                      if (db)
                                          db[c] += static_cast<T>(sum_dy);
                                  }
                                  if (!dx)
                                      continue;
                                  T* d = dx + n * count;
                                  for (int c = 0; c < s.c; ++c) {
                                      const double g = gamma.ptr()[c];
                                      for (std::size_t p = 0; p < plane; ++p) {
                                          const std::size_t i = c * plane + p;
                                          const double xhat = (v[i] - mean[n]) * invstd[n];
                                          d[i] += static_cast<T>(invstd[n] * (g * gy[i] - sum_dxhat / count -
                                                                              xhat * sum_dxhat_xhat / count));
                                      }
                                  }
                              }
                          });
    }
    return out;
}

#define ARFC_INSTANTIATE(T)                                                                                   \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&, \
                                  bool, double, double);                                                      \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);

ARFC_INSTANTIATE(float)
ARFC_INSTANTIATE(double)
#undef ARFC_INSTANTIATE

}  // namespace arfc
