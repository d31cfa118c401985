#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "camef/common.hpp"
#include "camef/params.hpp"
#include "camef/tensor.hpp"

namespace camef::ag {

using VarId = int;
using GradientMap = std::map<std::string, Tensor>;

/// Reverse-mode tape. Operations append nodes recording their inputs and a
/// closure that scatters the node's gradient back to its parents. Gradients
/// flow only through nodes reachable from a parameter leaf whose trainable
/// flag is set; frozen parameters get no gradient entry at all.
class Tape {
public:
    explicit Tape(std::uint64_t seed = 0, bool training = false)
        : rng_(seed), training_(training) {}

    bool training() const { return training_; }
    void set_training(bool t) { training_ = t; }
    std::mt19937_64& rng() { return rng_; }

    const Tensor& value(VarId id) const { return nodes_[check(id)].value; }
    const Tensor& grad(VarId id) const { return nodes_[check(id)].grad; }

    VarId leaf(Tensor t, bool needs_grad = false) {
        return push(std::move(t), {}, nullptr, needs_grad);
    }

    /// Parameter leaf: copies the current value; trainable flag gates grads.
    VarId param(const ParameterSet& ps, const std::string& name) {
        VarId id = push(ps.get(name), {}, nullptr, ps.trainable(name));
        nodes_[id].param_name = name;
        return id;
    }

    // ---- elementwise ------------------------------------------------------

    VarId add(VarId a, VarId b) {
        require_same_shape(a, b, "add");
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(t.nodes_[self].parents[0], g);
            t.accumulate(t.nodes_[self].parents[1], g);
        });
    }

    VarId sub(VarId a, VarId b) {
        require_same_shape(a, b, "sub");
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            t.accumulate(t.nodes_[self].parents[0], g);
            Tensor neg = g;
            for (double& v : neg.data()) v = -v;
            t.accumulate(t.nodes_[self].parents[1], neg);
        });
    }

    VarId mul(VarId a, VarId b) {
        require_same_shape(a, b, "mul");
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            Tensor ga = g, gb = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] *= t.value(b)[i];
                gb[i] *= t.value(a)[i];
            }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    VarId div(VarId a, VarId b) {
        require_same_shape(a, b, "div");
        Tensor out = value(a);
        const Tensor& vb = value(b);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] /= vb[i];
        return push(std::move(out), {a, b}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            Tensor ga = g, gb = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double bv = t.value(b)[i];
                ga[i] /= bv;
                gb[i] *= -t.value(a)[i] / (bv * bv);
            }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    VarId scale(VarId a, double c) {
        Tensor out = value(a);
        for (double& v : out.data()) v *= c;
        return push(std::move(out), {a}, [c](Tape& t, VarId self) {
            Tensor g = t.nodes_[self].grad;
            for (double& v : g.data()) v *= c;
            t.accumulate(t.nodes_[self].parents[0], g);
        });
    }

    /// GELU, tanh approximation: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
    VarId gelu(VarId a) {
        value(a).require_finite("gelu input");
        static const double kAlpha = std::sqrt(2.0 / M_PI);
        static const double kBeta = 0.044715;
        Tensor out = value(a);
        for (double& v : out.data()) {
            double u = kAlpha * (v + kBeta * v * v * v);
            v = 0.5 * v * (1.0 + std::tanh(u));
        }
        return push(std::move(out), {a}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0];
            Tensor ga = g;
            const Tensor& x = t.value(a);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double v = x[i];
                double u = kAlpha * (v + kBeta * v * v * v);
                double th = std::tanh(u);
                double du = kAlpha * (1.0 + 3.0 * kBeta * v * v);
                ga[i] *= 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
            }
            t.accumulate(a, ga);
        });
    }

    VarId relu(VarId a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        return push(std::move(out), {a}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0];
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (t.value(a)[i] <= 0.0) ga[i] = 0.0;
            t.accumulate(a, ga);
        });
    }

    VarId abs(VarId a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = std::fabs(v);
        return push(std::move(out), {a}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0];
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] *= t.value(a)[i] >= 0.0 ? 1.0 : -1.0;
            t.accumulate(a, ga);
        });
    }

    VarId square(VarId a) { return mul(a, a); }

    VarId sqrt_op(VarId a) {
        Tensor out = value(a);
        for (double& v : out.data()) v = std::sqrt(v);
        return push(std::move(out), {a}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga[i] *= 0.5 / std::max(y[i], 1e-12);
            t.accumulate(t.nodes_[self].parents[0], ga);
        });
    }

    /// Inverted dropout; identity in eval mode or when p == 0.
    VarId dropout(VarId a, double p) {
        if (!training_ || p <= 0.0) return a;
        if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
        auto mask = std::make_shared<std::vector<double>>(value(a).size());
        std::uniform_real_distribution<double> dist(0.0, 1.0);
        double keep = 1.0 - p;
        for (double& m : *mask) m = dist(rng_) < keep ? 1.0 / keep : 0.0;
        Tensor out = value(a);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*mask)[i];
        return push(std::move(out), {a}, [mask](Tape& t, VarId self) {
            Tensor g = t.nodes_[self].grad;
            for (std::size_t i = 0; i < g.size(); ++i) g[i] *= (*mask)[i];
            t.accumulate(t.nodes_[self].parents[0], g);
        });
    }

    // ---- linear algebra ---------------------------------------------------

    /// (m,k) x (k,n) -> (m,n).
    VarId matmul(VarId a, VarId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows())
            throw ShapeError("matmul shape mismatch: " + va.shape_str() + " x " +
                             vb.shape_str());
        std::size_t m = va.rows(), k = va.cols(), n = vb.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                double av = va.at(i, p);
                if (av == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) out.at(i, j) += av * vb.at(p, j);
            }
        return push(std::move(out), {a, b}, [m, k, n](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            Tensor ga({m, k}), gb({k, n});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double gv = g.at(i, j);
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) {
                        ga.at(i, p) += gv * vb.at(p, j);
                        gb.at(p, j) += va.at(i, p) * gv;
                    }
                }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// a (m,k) x b^T where b is (n,k) -> (m,n).
    VarId matmul_nt(VarId a, VarId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.cols())
            throw ShapeError("matmul_nt shape mismatch: " + va.shape_str() + " x " +
                             vb.shape_str() + "^T");
        std::size_t m = va.rows(), k = va.cols(), n = vb.rows();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += va.at(i, p) * vb.at(j, p);
                out.at(i, j) = s;
            }
        return push(std::move(out), {a, b}, [m, k, n](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            const Tensor& va = t.value(a);
            const Tensor& vb = t.value(b);
            Tensor ga({m, k}), gb({n, k});
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    double gv = g.at(i, j);
                    if (gv == 0.0) continue;
                    for (std::size_t p = 0; p < k; ++p) {
                        ga.at(i, p) += gv * vb.at(j, p);
                        gb.at(j, p) += gv * va.at(i, p);
                    }
                }
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// Broadcast a length-n bias over every row of a (m,n) matrix.
    VarId add_rowwise(VarId a, VarId bias) {
        const Tensor& va = value(a);
        const Tensor& vb = value(bias);
        if (vb.rank() != 1 || va.cols() != vb.size())
            throw ShapeError("bias shape " + vb.shape_str() + " does not match " +
                             va.shape_str());
        Tensor out = va;
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += vb[c];
        return push(std::move(out), {a, bias}, [](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            t.accumulate(a, g);
            Tensor gb({g.cols()});
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
            t.accumulate(b, gb);
        });
    }

    // ---- shape ops --------------------------------------------------------

    VarId reshape(VarId a, std::vector<std::size_t> shape) {
        Tensor out(shape, value(a).data());
        return push(std::move(out), {a}, [](Tape& t, VarId self) {
            VarId a = t.nodes_[self].parents[0];
            Tensor g(t.value(a).shape(), t.nodes_[self].grad.data());
            t.accumulate(a, g);
        });
    }

    /// Concatenate two rank-1 vectors.
    VarId concat(VarId a, VarId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 1 || vb.rank() != 1)
            throw ShapeError("concat expects rank-1 tensors");
        Tensor out({va.size() + vb.size()});
        for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i];
        for (std::size_t i = 0; i < vb.size(); ++i) out[va.size() + i] = vb[i];
        std::size_t na = va.size();
        return push(std::move(out), {a, b}, [na](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0], b = t.nodes_[self].parents[1];
            Tensor ga({na}), gb({g.size() - na});
            for (std::size_t i = 0; i < na; ++i) ga[i] = g[i];
            for (std::size_t i = na; i < g.size(); ++i) gb[i - na] = g[i];
            t.accumulate(a, ga);
            t.accumulate(b, gb);
        });
    }

    /// Concatenate two rank-2 tensors with equal row counts along columns.
    VarId concat_cols(VarId a, VarId b) {
        const Tensor& va = value(a);
        const Tensor& vb = value(b);
        if (va.rank() != 2 || vb.rank() != 2 || va.rows() != vb.rows())
            throw ShapeError("concat_cols row mismatch: " + va.shape_str() + " vs " +
                             vb.shape_str());
        std::size_t m = va.rows(), na = va.cols(), nb = vb.cols();
        Tensor out({m, na + nb});
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < na; ++c) out.at(r, c) = va.at(r, c);
            for (std::size_t c = 0; c < nb; ++c) out.at(r, na + c) = vb.at(r, c);
        }
        return push(std::move(out), {a, b}, [m, na, nb](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga({m, na}), gb({m, nb});
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t c = 0; c < na; ++c) ga.at(r, c) = g.at(r, c);
                for (std::size_t c = 0; c < nb; ++c) gb.at(r, c) = g.at(r, na + c);
            }
            t.accumulate(t.nodes_[self].parents[0], ga);
            t.accumulate(t.nodes_[self].parents[1], gb);
        });
    }

    VarId slice_cols(VarId a, std::size_t c0, std::size_t c1) {
        const Tensor& va = value(a);
        if (va.rank() != 2 || c1 > va.cols() || c0 >= c1)
            throw ShapeError("bad column slice [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") of " + va.shape_str());
        Tensor out({va.rows(), c1 - c0});
        for (std::size_t r = 0; r < va.rows(); ++r)
            for (std::size_t c = c0; c < c1; ++c) out.at(r, c - c0) = va.at(r, c);
        return push(std::move(out), {a}, [c0](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId a = t.nodes_[self].parents[0];
            Tensor ga(t.value(a).shape());
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) ga.at(r, c0 + c) = g.at(r, c);
            t.accumulate(a, ga);
        });
    }

    /// Mean over rows: (m,n) -> (n).
    VarId mean_rows(VarId a) {
        const Tensor& va = value(a);
        if (va.rank() != 2) throw ShapeError("mean_rows expects rank-2 input");
        std::size_t m = va.rows(), n = va.cols();
        Tensor out({n});
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) out[c] += va.at(r, c) / double(m);
        return push(std::move(out), {a}, [m, n](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            Tensor ga({m, n});
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t c = 0; c < n; ++c) ga.at(r, c) = g[c] / double(m);
            t.accumulate(t.nodes_[self].parents[0], ga);
        });
    }

    VarId sum_all(VarId a) {
        double s = 0.0;
        for (double v : value(a).data()) s += v;
        return push(Tensor::scalar(s), {a}, [](Tape& t, VarId self) {
            VarId a = t.nodes_[self].parents[0];
            double g = t.nodes_[self].grad[0];
            Tensor ga(t.value(a).shape(), g);
            t.accumulate(a, ga);
        });
    }

    VarId mean_all(VarId a) {
        return scale(sum_all(a), 1.0 / double(value(a).size()));
    }

    // ---- normalization and attention --------------------------------------

    /// Per-row layer norm over the last axis; epsilon 1e-5 inside the sqrt.
    VarId layer_norm(VarId x, VarId gain, VarId bias) {
        const Tensor& vx = value(x);
        const Tensor& vg = value(gain);
        const Tensor& vb = value(bias);
        std::size_t n = vx.cols();
        if (n == 0) throw ShapeError("layer_norm: zero-length last axis");
        if (vg.size() != n || vb.size() != n)
            throw ShapeError("layer_norm gain/bias length " + vg.shape_str() +
                             " vs last axis " + std::to_string(n));
        std::size_t m = vx.rank() == 2 ? vx.rows() : 1;
        auto xhat = std::make_shared<Tensor>(vx.shape());
        auto inv_std = std::make_shared<std::vector<double>>(m);
        Tensor out(vx.shape());
        for (std::size_t r = 0; r < m; ++r) {
            double mean = 0.0;
            for (std::size_t c = 0; c < n; ++c) mean += vx.data()[r * n + c];
            mean /= double(n);
            double var = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
                double d = vx.data()[r * n + c] - mean;
                var += d * d;
            }
            var /= double(n);
            double is = 1.0 / std::sqrt(var + kLayerNormEps);
            (*inv_std)[r] = is;
            for (std::size_t c = 0; c < n; ++c) {
                double h = (vx.data()[r * n + c] - mean) * is;
                xhat->data()[r * n + c] = h;
                out.data()[r * n + c] = h * vg[c] + vb[c];
            }
        }
        return push(std::move(out), {x, gain, bias},
                    [m, n, xhat, inv_std](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            VarId x = t.nodes_[self].parents[0];
            VarId gain = t.nodes_[self].parents[1];
            VarId bias = t.nodes_[self].parents[2];
            const Tensor& vg = t.value(gain);
            Tensor gx(t.value(x).shape()), gg({n}), gb({n});
            for (std::size_t r = 0; r < m; ++r) {
                double sum_gd = 0.0, sum_gdx = 0.0;
                for (std::size_t c = 0; c < n; ++c) {
                    double gd = g.data()[r * n + c] * vg[c];
                    sum_gd += gd;
                    sum_gdx += gd * xhat->data()[r * n + c];
                }
                for (std::size_t c = 0; c < n; ++c) {
                    double gd = g.data()[r * n + c] * vg[c];
                    double h = xhat->data()[r * n + c];
                    gx.data()[r * n + c] =
                        (gd - sum_gd / double(n) - h * sum_gdx / double(n)) * (*inv_std)[r];
                    gg[c] += g.data()[r * n + c] * h;
                    gb[c] += g.data()[r * n + c];
                }
            }
            t.accumulate(x, gx);
            t.accumulate(gain, gg);
            t.accumulate(bias, gb);
        });
    }

    /// Row-wise softmax over a square score matrix. With `causal` set, row i
    /// attends only to columns <= i; masked entries get probability zero.
    VarId softmax_rows(VarId a, bool causal) {
        const Tensor& va = value(a);
        if (va.rank() != 2) throw ShapeError("softmax_rows expects rank-2 input");
        std::size_t m = va.rows(), n = va.cols();
        if (causal && m != n) throw ShapeError("causal softmax expects square scores");
        Tensor out({m, n});
        for (std::size_t r = 0; r < m; ++r) {
            std::size_t limit = causal ? r + 1 : n;
            double mx = -1e300;
            for (std::size_t c = 0; c < limit; ++c) mx = std::max(mx, va.at(r, c));
            double sum = 0.0;
            for (std::size_t c = 0; c < limit; ++c) {
                double e = std::exp(va.at(r, c) - mx);
                out.at(r, c) = e;
                sum += e;
            }
            for (std::size_t c = 0; c < limit; ++c) out.at(r, c) /= sum;
        }
        return push(std::move(out), {a}, [m, n, causal](Tape& t, VarId self) {
            const Tensor& g = t.nodes_[self].grad;
            const Tensor& y = t.nodes_[self].value;
            Tensor ga({m, n});
            for (std::size_t r = 0; r < m; ++r) {
                std::size_t limit = causal ? r + 1 : n;
                double dot = 0.0;
                for (std::size_t c = 0; c < limit; ++c) dot += y.at(r, c) * g.at(r, c);
                for (std::size_t c = 0; c < limit; ++c)
                    ga.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
            }
            t.accumulate(t.nodes_[self].parents[0], ga);
        });
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar loss. Returns gradients keyed by parameter
    /// name for trainable parameter leaves only.
    GradientMap backward(VarId loss) {
        if (value(loss).size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                value(loss).shape_str());
        for (auto& n : nodes_)
            if (n.needs_grad && n.grad.size() == 0) n.grad = Tensor(n.value.shape());
        if (nodes_[loss].needs_grad) nodes_[loss].grad[0] = 1.0;
        for (VarId i = loss; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.needs_grad && n.backprop) n.backprop(*this, i);
        }
        GradientMap grads;
        for (const auto& n : nodes_)
            if (n.needs_grad && !n.param_name.empty()) {
                auto [it, fresh] = grads.emplace(n.param_name, n.grad);
                if (!fresh)
                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                        it->second[i] += n.grad[i];
            }
        return grads;
    }

    static constexpr double kLayerNormEps = 1e-5;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<VarId> parents;
        std::function<void(Tape&, VarId)> backprop;
        bool needs_grad = false;
        std::string param_name;
    };

    VarId push(Tensor value, std::vector<VarId> parents,
               std::function<void(Tape&, VarId)> backprop, bool leaf_grad = false) {
        bool needs = leaf_grad;
        for (VarId p : parents) needs = needs || nodes_[p].needs_grad;
        nodes_.push_back(Node{std::move(value), {}, std::move(parents),
                              needs ? std::move(backprop) : nullptr, needs, {}});
        return static_cast<VarId>(nodes_.size() - 1);
    }

    VarId check(VarId id) const {
        if (id < 0 || id >= static_cast<VarId>(nodes_.size()))
            throw ContractError("invalid tape variable id");
        return id;
    }

    void accumulate(VarId id, const Tensor& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    void require_same_shape(VarId a, VarId b, const char* op) const {
        if (!value(a).same_shape(value(b)))
            throw ShapeError(std::string(op) + ": shape mismatch " +
                             value(a).shape_str() + " vs " + value(b).shape_str());
    }

    std::vector<Node> nodes_;
    std::mt19937_64 rng_;
    bool training_;

    static constexpr double kAlpha = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kBeta = 0.044715;
};

}  // namespace camef::ag
