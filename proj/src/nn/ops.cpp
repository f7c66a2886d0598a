#include "pmr/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pmr/errors.hpp"

namespace pmr::nn::ops {

namespace {

void require_rank4(const Tensor& t, const char* op) {
    if (t.rank() != 4) fail(ErrorKind::ShapeMismatch, std::string(op) + " expects (T,H,W,C)");
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        fail(ErrorKind::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                                           shape_string(b.shape()));
    }
}

// Gradient buffer of parent i, or nullptr when it does not need one.
Tensor* parent_grad(Node& n, std::size_t i) {
    Node& p = *n.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const Tensor& parent_value(Node& n, std::size_t i) { return n.parents[i]->value; }

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (Tensor* g = parent_grad(n, k)) {
                for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
            }
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
        }
        if (Tensor* g = parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = parent_value(n, 0);
        const Tensor& bv = parent_value(n, 1);
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * bv[i];
        }
        if (Tensor* g = parent_grad(n, 1)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.values()) v *= s;
    return make_result(std::move(out), {a}, [s](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * n.grad[i];
        }
    });
}

Var gelu(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    return make_result(std::move(out), {x}, [](Node& n) {
        const Tensor& xv = parent_value(n, 0);
        Tensor* g = parent_grad(n, 0);
        if (!g) return;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g->size(); ++i) {
            const double v = xv[i];
            const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            (*g)[i] += n.grad[i] * (cdf + v * pdf);
        }
    });
}

Var clamp01(const Var& x) {
    Tensor out = x.value();
    for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
    return make_result(std::move(out), {x}, [](Node& n) {
        const Tensor& xv = parent_value(n, 0);
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t i = 0; i < g->size(); ++i) {
                if (xv[i] >= 0.0 && xv[i] <= 1.0) (*g)[i] += n.grad[i];
            }
        }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank4(xv, "linear");
    const int cin = xv.channels();
    const int cout = wv.dim(0);
    if (wv.rank() != 2 || wv.dim(1) != cin) {
        fail(ErrorKind::ShapeMismatch, "linear weight " + shape_string(wv.shape()) +
                                           " does not match input channels " + std::to_string(cin));
    }
    const std::size_t positions = xv.size() / cin;
    Tensor out({xv.frames(), xv.height(), xv.width(), cout});
    const double* bp = bias.defined() ? bias.value().data() : nullptr;
    for (std::size_t p = 0; p < positions; ++p) {
        const double* in = xv.data() + p * cin;
        double* o = out.data() + p * cout;
        for (int oc = 0; oc < cout; ++oc) {
            const double* w = wv.data() + static_cast<std::size_t>(oc) * cin;
            double acc = bp ? bp[oc] : 0.0;
            for (int i = 0; i < cin; ++i) acc += w[i] * in[i];
            o[oc] = acc;
        }
    }
    std::vector<Var> parents = {x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out), parents, [positions, cin, cout](Node& n) {
        const Tensor& xv = parent_value(n, 0);
        const Tensor& wv = parent_value(n, 1);
        Tensor* gx = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gb = n.parents.size() > 2 ? parent_grad(n, 2) : nullptr;
        for (std::size_t p = 0; p < positions; ++p) {
            const double* go = n.grad.data() + p * cout;
            const double* in = xv.data() + p * cin;
            double* gi = gx ? gx->data() + p * cin : nullptr;
            for (int oc = 0; oc < cout; ++oc) {
                const double g = go[oc];
                if (g == 0.0) continue;
                const double* w = wv.data() + static_cast<std::size_t>(oc) * cin;
                if (gi) {
                    for (int i = 0; i < cin; ++i) gi[i] += w[i] * g;
                }
                if (gw) {
                    double* gwp = gw->data() + static_cast<std::size_t>(oc) * cin;
                    for (int i = 0; i < cin; ++i) gwp[i] += in[i] * g;
                }
                if (gb) (*gb)[oc] += g;
            }
        }
    });
}

Var conv3d(const Var& x, const Var& weight, const Var& bias, int groups) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    require_rank4(xv, "conv3d");
    if (wv.rank() != 5) fail(ErrorKind::ShapeMismatch, "conv3d weight must be rank 5");
    const int T = xv.frames(), H = xv.height(), W = xv.width(), C = xv.channels();
    const int cout = wv.dim(0), kt = wv.dim(1), kh = wv.dim(2), kw = wv.dim(3), ipg = wv.dim(4);
    if (groups < 1 || ipg * groups != C || cout % groups != 0) {
        fail(ErrorKind::ShapeMismatch, "conv3d groups do not divide channels: weight " +
                                           shape_string(wv.shape()) + ", C=" + std::to_string(C) +
                                           ", groups=" + std::to_string(groups));
    }
    const int opg = cout / groups;
    const int rt = kt / 2, rh = kh / 2, rw = kw / 2;
    const int taps = kt * kh * kw;
    Tensor out({T, H, W, cout});
    const double* bp = bias.defined() ? bias.value().data() : nullptr;

    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                double* o = out.data() + out.offset(t, y, xx, 0);
                for (int oc = 0; oc < cout; ++oc) o[oc] = bp ? bp[oc] : 0.0;
                for (int dt = 0; dt < kt; ++dt) {
                    const int ts = t + dt - rt;
                    if (ts < 0 || ts >= T) continue;
                    for (int dy = 0; dy < kh; ++dy) {
                        const int ys = y + dy - rh;
                        if (ys < 0 || ys >= H) continue;
                        for (int dx = 0; dx < kw; ++dx) {
                            const int xs = xx + dx - rw;
                            if (xs < 0 || xs >= W) continue;
                            const int tap = (dt * kh + dy) * kw + dx;
                            const double* in = xv.data() + xv.offset(ts, ys, xs, 0);
                            for (int oc = 0; oc < cout; ++oc) {
                                const double* w = wv.data() + (static_cast<std::size_t>(oc) * taps + tap) * ipg;
                                const double* ip = in + (oc / opg) * ipg;
                                double acc = 0.0;
                                for (int i = 0; i < ipg; ++i) acc += w[i] * ip[i];
                                o[oc] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    std::vector<Var> parents = {x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_result(std::move(out), parents, [=](Node& n) {
        const Tensor& xv = parent_value(n, 0);
        const Tensor& wv = parent_value(n, 1);
        Tensor* gx = parent_grad(n, 0);
        Tensor* gw = parent_grad(n, 1);
        Tensor* gb = n.parents.size() > 2 ? parent_grad(n, 2) : nullptr;
        for (int t = 0; t < T; ++t) {
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    const double* go = n.grad.data() + n.grad.offset(t, y, xx, 0);
                    if (gb) {
                        for (int oc = 0; oc < cout; ++oc) (*gb)[oc] += go[oc];
                    }
                    for (int dt = 0; dt < kt; ++dt) {
                        const int ts = t + dt - rt;
                        if (ts < 0 || ts >= T) continue;
                        for (int dy = 0; dy < kh; ++dy) {
                            const int ys = y + dy - rh;
                            if (ys < 0 || ys >= H) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                const int xs = xx + dx - rw;
                                if (xs < 0 || xs >= W) continue;
                                const int tap = (dt * kh + dy) * kw + dx;
                                const std::size_t in_off = xv.offset(ts, ys, xs, 0);
                                const double* in = xv.data() + in_off;
                                for (int oc = 0; oc < cout; ++oc) {
                                    const double g = go[oc];
                                    if (g == 0.0) continue;
                                    const std::size_t w_off = (static_cast<std::size_t>(oc) * taps + tap) * ipg;
                                    const int base = (oc / opg) * ipg;
                                    if (gx) {
                                        double* gi = gx->data() + in_off + base;
                                        const double* w = wv.data() + w_off;
                                        for (int i = 0; i < ipg; ++i) gi[i] += w[i] * g;
                                    }
                                    if (gw) {
                                        double* gwp = gw->data() + w_off;
                                        for (int i = 0; i < ipg; ++i) gwp[i] += in[base + i] * g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    require_rank4(xv, "layer_norm");
    const int C = xv.channels();
    const std::size_t positions = xv.size() / C;
    Tensor out(xv.shape());
    auto xhat = std::make_shared<std::vector<double>>(xv.size());
    auto inv_std = std::make_shared<std::vector<double>>(positions);
    const double* gp = gamma.value().data();
    const double* bp = beta.value().data();
    for (std::size_t p = 0; p < positions; ++p) {
        const double* in = xv.data() + p * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += in[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= C;
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[p] = is;
        for (int c = 0; c < C; ++c) {
            const double h = (in[c] - mean) * is;
            (*xhat)[p * C + c] = h;
            out[p * C + c] = gp[c] * h + bp[c];
        }
    }
    return make_result(std::move(out), {x, gamma, beta}, [=](Node& n) {
        const Tensor& gv = parent_value(n, 1);
        Tensor* gx = parent_grad(n, 0);
        Tensor* gg = parent_grad(n, 1);
        Tensor* gb = parent_grad(n, 2);
        std::vector<double> dh(C);
        for (std::size_t p = 0; p < positions; ++p) {
            const double* go = n.grad.data() + p * C;
            const double* h = xhat->data() + p * C;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (int c = 0; c < C; ++c) {
                if (gg) (*gg)[c] += go[c] * h[c];
                if (gb) (*gb)[c] += go[c];
                dh[c] = go[c] * gv[c];
                sum_dh += dh[c];
                sum_dh_h += dh[c] * h[c];
            }
            if (gx) {
                const double is = (*inv_std)[p];
                for (int c = 0; c < C; ++c) {
                    (*gx)[p * C + c] += is * (dh[c] - sum_dh / C - h[c] * sum_dh_h / C);
                }
            }
        }
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) fail(ErrorKind::ShapeMismatch, "concat of nothing");
    const Tensor& first = parts.front().value();
    require_rank4(first, "concat_channels");
    std::vector<int> widths;
    int total = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        require_rank4(v, "concat_channels");
        if (v.frames() != first.frames() || v.height() != first.height() || v.width() != first.width()) {
            fail(ErrorKind::ShapeMismatch, "concat_channels: spatial shapes differ");
        }
        widths.push_back(v.channels());
        total += v.channels();
    }
    const std::size_t positions = first.size() / first.channels();
    Tensor out({first.frames(), first.height(), first.width(), total});
    int base = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t p = 0; p < positions; ++p) {
            std::copy_n(v.data() + p * widths[k], widths[k], out.data() + p * total + base);
        }
        base += widths[k];
    }
    return make_result(std::move(out), parts, [widths, total, positions](Node& n) {
        int base = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
            if (Tensor* g = parent_grad(n, k)) {
                for (std::size_t p = 0; p < positions; ++p) {
                    const double* src = n.grad.data() + p * total + base;
                    double* dst = g->data() + p * widths[k];
                    for (int c = 0; c < widths[k]; ++c) dst[c] += src[c];
                }
            }
            base += widths[k];
        }
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    const Tensor& xv = x.value();
    require_rank4(xv, "slice_channels");
    const int C = xv.channels();
    if (begin < 0 || end > C || begin >= end) fail(ErrorKind::ShapeMismatch, "bad channel slice");
    const int width = end - begin;
    const std::size_t positions = xv.size() / C;
    Tensor out({xv.frames(), xv.height(), xv.width(), width});
    for (std::size_t p = 0; p < positions; ++p) {
        std::copy_n(xv.data() + p * C + begin, width, out.data() + p * width);
    }
    return make_result(std::move(out), {x}, [=](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (std::size_t p = 0; p < positions; ++p) {
                for (int c = 0; c < width; ++c) (*g)[p * C + begin + c] += n.grad[p * width + c];
            }
        }
    });
}

Tensor haar_forward(const Tensor& xv) {
    require_rank4(xv, "haar");
    const int T = xv.frames(), H = xv.height(), W = xv.width(), C = xv.channels();
    if (H % 2 != 0 || W % 2 != 0) fail(ErrorKind::OddDimensions, "Haar level needs even H and W");
    Tensor out({T, H / 2, W / 2, 4 * C});
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H / 2; ++y) {
            for (int x = 0; x < W / 2; ++x) {
                double* o = out.data() + out.offset(t, y, x, 0);
                for (int c = 0; c < C; ++c) {
                    const double a = xv.at(t, 2 * y, 2 * x, c);
                    const double b = xv.at(t, 2 * y, 2 * x + 1, c);
                    const double cc = xv.at(t, 2 * y + 1, 2 * x, c);
                    const double d = xv.at(t, 2 * y + 1, 2 * x + 1, c);
                    o[c] = 0.5 * (a + b + cc + d);
                    o[C + c] = 0.5 * (a - b + cc - d);
                    o[2 * C + c] = 0.5 * (a + b - cc - d);
                    o[3 * C + c] = 0.5 * (a - b - cc + d);
                }
            }
        }
    }
    return out;
}

Tensor haar_inverse(const Tensor& bands) {
    require_rank4(bands, "haar_inverse");
    const int T = bands.frames(), h = bands.height(), w = bands.width();
    if (bands.channels() % 4 != 0) fail(ErrorKind::ShapeMismatch, "Haar bands need 4C channels");
    const int C = bands.channels() / 4;
    Tensor out({T, 2 * h, 2 * w, C});
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double* b = bands.data() + bands.offset(t, y, x, 0);
                for (int c = 0; c < C; ++c) {
                    const double ll = b[c], lh = b[C + c], hl = b[2 * C + c], hh = b[3 * C + c];
                    out.at(t, 2 * y, 2 * x, c) = 0.5 * (ll + lh + hl + hh);
                    out.at(t, 2 * y, 2 * x + 1, c) = 0.5 * (ll - lh + hl - hh);
                    out.at(t, 2 * y + 1, 2 * x, c) = 0.5 * (ll + lh - hl - hh);
                    out.at(t, 2 * y + 1, 2 * x + 1, c) = 0.5 * (ll - lh - hl + hh);
                }
            }
        }
    }
    return out;
}

Var haar_down(const Var& x) {
    Tensor out = haar_forward(x.value());
    return make_result(std::move(out), {x}, [](Node& n) {
        // The transform is orthonormal, so its adjoint is its inverse.
        if (Tensor* g = parent_grad(n, 0)) {
            const Tensor back = haar_inverse(n.grad);
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += back[i];
        }
    });
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.value();
    require_rank4(xv, "upsample_nearest2");
    const int T = xv.frames(), H = xv.height(), W = xv.width(), C = xv.channels();
    Tensor out({T, 2 * H, 2 * W, C});
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < 2 * H; ++y) {
            for (int xx = 0; xx < 2 * W; ++xx) {
                std::copy_n(xv.data() + xv.offset(t, y / 2, xx / 2, 0), C,
                            out.data() + out.offset(t, y, xx, 0));
            }
        }
    }
    return make_result(std::move(out), {x}, [=](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (int t = 0; t < T; ++t) {
                for (int y = 0; y < 2 * H; ++y) {
                    for (int xx = 0; xx < 2 * W; ++xx) {
                        const double* src = n.grad.data() + n.grad.offset(t, y, xx, 0);
                        double* dst = g->data() + g->offset(t, y / 2, xx / 2, 0);
                        for (int c = 0; c < C; ++c) dst[c] += src[c];
                    }
                }
            }
        }
    });
}

namespace {

struct Tap {
    int i0, i1;
    double w;  // weight of i1
};

std::vector<Tap> resize_taps(int src, int dst) {
    std::vector<Tap> taps(dst);
    const double s = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
        const double f = std::clamp((i + 0.5) * s - 0.5, 0.0, src - 1.0);
        const int i0 = static_cast<int>(f);
        taps[i] = {i0, std::min(i0 + 1, src - 1), f - i0};
    }
    return taps;
}

}  // namespace

Var resize_bilinear(const Var& x, int height, int width) {
    const Tensor& xv = x.value();
    require_rank4(xv, "resize_bilinear");
    const int T = xv.frames(), C = xv.channels();
    const auto ty = resize_taps(xv.height(), height);
    const auto tx = resize_taps(xv.width(), width);
    Tensor out({T, height, width, C});
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < height; ++y) {
            const Tap& a = ty[y];
            for (int xx = 0; xx < width; ++xx) {
                const Tap& b = tx[xx];
                for (int c = 0; c < C; ++c) {
                    out.at(t, y, xx, c) =
                        (1 - a.w) * ((1 - b.w) * xv.at(t, a.i0, b.i0, c) + b.w * xv.at(t, a.i0, b.i1, c)) +
                        a.w * ((1 - b.w) * xv.at(t, a.i1, b.i0, c) + b.w * xv.at(t, a.i1, b.i1, c));
                }
            }
        }
    }
    return make_result(std::move(out), {x}, [=](Node& n) {
        Tensor* g = parent_grad(n, 0);
        if (!g) return;
        for (int t = 0; t < T; ++t) {
            for (int y = 0; y < height; ++y) {
                const Tap& a = ty[y];
                for (int xx = 0; xx < width; ++xx) {
                    const Tap& b = tx[xx];
                    for (int c = 0; c < C; ++c) {
                        const double go = n.grad.at(t, y, xx, c);
                        g->at(t, a.i0, b.i0, c) += (1 - a.w) * (1 - b.w) * go;
                        g->at(t, a.i0, b.i1, c) += (1 - a.w) * b.w * go;
                        g->at(t, a.i1, b.i0, c) += a.w * (1 - b.w) * go;
                        g->at(t, a.i1, b.i1, c) += a.w * b.w * go;
                    }
                }
            }
        }
    });
}

Var warp(const Var& x, const Var& offsets) {
    const Tensor& xv = x.value();
    const Tensor& ov = offsets.value();
    require_rank4(xv, "warp");
    require_rank4(ov, "warp");
    const int T = xv.frames(), H = xv.height(), W = xv.width(), C = xv.channels();
    if (ov.frames() != T || ov.height() != H || ov.width() != W || ov.channels() != 2) {
        fail(ErrorKind::ShapeMismatch, "warp offsets must be (T,H,W,2) matching the input");
    }
    Tensor out(xv.shape());
    for (int t = 0; t < T; ++t) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                const double sx = std::clamp(xx + ov.at(t, y, xx, 0), 0.0, W - 1.0);
                const double sy = std::clamp(y + ov.at(t, y, xx, 1), 0.0, H - 1.0);
                const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
                const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                const double ax = sx - x0, ay = sy - y0;
                const double* v00 = xv.data() + xv.offset(t, y0, x0, 0);
                const double* v01 = xv.data() + xv.offset(t, y0, x1, 0);
                const double* v10 = xv.data() + xv.offset(t, y1, x0, 0);
                const double* v11 = xv.data() + xv.offset(t, y1, x1, 0);
                double* o = out.data() + out.offset(t, y, xx, 0);
                for (int c = 0; c < C; ++c) {
                    o[c] = (1 - ay) * ((1 - ax) * v00[c] + ax * v01[c]) + ay * ((1 - ax) * v10[c] + ax * v11[c]);
                }
            }
        }
    }
    return make_result(std::move(out), {x, offsets}, [=](Node& n) {
        const Tensor& xv = parent_value(n, 0);
        const Tensor& ov = parent_value(n, 1);
        Tensor* gx = parent_grad(n, 0);
        Tensor* go = parent_grad(n, 1);
        for (int t = 0; t < T; ++t) {
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    const double rx = xx + ov.at(t, y, xx, 0);
                    const double ry = y + ov.at(t, y, xx, 1);
                    const bool clamp_x = rx < 0.0 || rx > W - 1.0;
                    const bool clamp_y = ry < 0.0 || ry > H - 1.0;
                    const double sx = std::clamp(rx, 0.0, W - 1.0);
                    const double sy = std::clamp(ry, 0.0, H - 1.0);
                    const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
                    const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                    const double ax = sx - x0, ay = sy - y0;
                    const std::size_t o00 = xv.offset(t, y0, x0, 0), o01 = xv.offset(t, y0, x1, 0),
                                      o10 = xv.offset(t, y1, x0, 0), o11 = xv.offset(t, y1, x1, 0);
                    const double* g = n.grad.data() + n.grad.offset(t, y, xx, 0);
                    double dax = 0.0, day = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double gc = g[c];
                        if (gx) {
                            (*gx)[o00 + c] += (1 - ay) * (1 - ax) * gc;
                            (*gx)[o01 + c] += (1 - ay) * ax * gc;
                            (*gx)[o10 + c] += ay * (1 - ax) * gc;
                            (*gx)[o11 + c] += ay * ax * gc;
                        }
                        const double v00 = xv[o00 + c], v01 = xv[o01 + c], v10 = xv[o10 + c], v11 = xv[o11 + c];
                        dax += gc * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
                        day += gc * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
                    }
                    if (go) {
                        if (!clamp_x && x1 != x0) go->at(t, y, xx, 0) += dax;
                        if (!clamp_y && y1 != y0) go->at(t, y, xx, 1) += day;
                    }
                }
            }
        }
    });
}

Var temporal_deviation(const Var& x) {
    const Tensor& xv = x.value();
    require_rank4(xv, "temporal_deviation");
    const int T = xv.frames();
    const std::size_t frame = xv.size() / T;
    std::vector<double> mean(frame, 0.0);
    for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < frame; ++i) mean[i] += xv[t * frame + i];
    }
    for (double& m : mean) m /= T;
    Tensor out = xv;
    for (int t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < frame; ++i) out[t * frame + i] -= mean[i];
    }
    return make_result(std::move(out), {x}, [T, frame](Node& n) {
        Tensor* g = parent_grad(n, 0);
        if (!g) return;
        std::vector<double> gmean(frame, 0.0);
        for (int t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < frame; ++i) gmean[i] += n.grad[t * frame + i];
        }
        for (int t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < frame; ++i) (*g)[t * frame + i] += n.grad[t * frame + i] - gmean[i] / T;
        }
    });
}

Var channel_attention(const Var& qkv, const Var& temperature, int heads,
                      std::vector<Tensor>* attention_out) {
    const Tensor& xv = qkv.value();
    require_rank4(xv, "channel_attention");
    const int C3 = xv.channels();
    if (C3 % 3 != 0 || (C3 / 3) % heads != 0) {
        fail(ErrorKind::ConfigError, "attention channels not divisible by 3·heads");
    }
    if (static_cast<int>(temperature.value().size()) != heads) {
        fail(ErrorKind::ShapeMismatch, "one temperature per head expected");
    }
    const int C = C3 / 3;
    const int d = C / heads;
    const std::size_t N = xv.size() / C3;
    const double* X = xv.data();
    constexpr double kNormEps = 1e-12;

    struct HeadState {
        std::vector<double> nq, nk, S, A;
    };
    auto states = std::make_shared<std::vector<HeadState>>(heads);
    Tensor out({xv.frames(), xv.height(), xv.width(), C});
    if (attention_out) attention_out->clear();

    for (int h = 0; h < heads; ++h) {
        HeadState& st = (*states)[h];
        const int q0 = h * d, k0 = C + h * d, v0 = 2 * C + h * d;
        st.nq.assign(d, 0.0);
        st.nk.assign(d, 0.0);
        for (std::size_t n = 0; n < N; ++n) {
            const double* row = X + n * C3;
            for (int i = 0; i < d; ++i) {
                st.nq[i] += row[q0 + i] * row[q0 + i];
                st.nk[i] += row[k0 + i] * row[k0 + i];
            }
        }
        for (int i = 0; i < d; ++i) {
            st.nq[i] = std::max(std::sqrt(st.nq[i]), kNormEps);
            st.nk[i] = std::max(std::sqrt(st.nk[i]), kNormEps);
        }
        st.S.assign(static_cast<std::size_t>(d) * d, 0.0);
        for (std::size_t n = 0; n < N; ++n) {
            const double* row = X + n * C3;
            for (int i = 0; i < d; ++i) {
                const double qi = row[q0 + i];
                double* srow = st.S.data() + static_cast<std::size_t>(i) * d;
                for (int j = 0; j < d; ++j) srow[j] += qi * row[k0 + j];
            }
        }
        const double tau = temperature.value()[h];
        st.A.assign(static_cast<std::size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) {
            double peak = -1e300;
            for (int j = 0; j < d; ++j) {
                double& s = st.S[i * d + j];
                s /= st.nq[i] * st.nk[j];
                peak = std::max(peak, s / tau);
            }
            double total = 0.0;
            for (int j = 0; j < d; ++j) {
                const double e = std::exp(st.S[i * d + j] / tau - peak);
                st.A[i * d + j] = e;
                total += e;
            }
            for (int j = 0; j < d; ++j) st.A[i * d + j] /= total;
        }
        for (std::size_t n = 0; n < N; ++n) {
            const double* row = X + n * C3;
            double* o = out.data() + n * C + h * d;
            for (int i = 0; i < d; ++i) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j) acc += st.A[i * d + j] * row[v0 + j];
                o[i] = acc;
            }
        }
        if (attention_out) attention_out->push_back(Tensor({d, d}, st.A));
    }

    return make_result(std::move(out), {qkv, temperature}, [=](Node& node) {
        const Tensor& xv = parent_value(node, 0);
        const Tensor& tv = parent_value(node, 1);
        Tensor* gx = parent_grad(node, 0);
        Tensor* gt = parent_grad(node, 1);
        const double* X = xv.data();
        const double* G = node.grad.data();
        std::vector<double> dA(static_cast<std::size_t>(d) * d), dS(static_cast<std::size_t>(d) * d);
        std::vector<double> dqh(static_cast<std::size_t>(N) * d), dkh(static_cast<std::size_t>(N) * d);
        for (int h = 0; h < heads; ++h) {
            const HeadState& st = (*states)[h];
            const int q0 = h * d, k0 = C + h * d, v0 = 2 * C + h * d;
            const double tau = tv[h];
            std::fill(dA.begin(), dA.end(), 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                const double* row = X + n * C3;
                const double* g = G + n * C + h * d;
                for (int i = 0; i < d; ++i) {
                    for (int j = 0; j < d; ++j) dA[i * d + j] += g[i] * row[v0 + j];
                }
                if (gx) {
                    double* gv = gx->data() + n * C3 + v0;
                    for (int j = 0; j < d; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < d; ++i) acc += st.A[i * d + j] * g[i];
                        gv[j] += acc;
                    }
                }
            }
            double dtau = 0.0;
            for (int i = 0; i < d; ++i) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += st.A[i * d + j] * dA[i * d + j];
                for (int j = 0; j < d; ++j) {
                    const double dl = st.A[i * d + j] * (dA[i * d + j] - dot);
                    dS[i * d + j] = dl / tau;
                    dtau -= dl * st.S[i * d + j] / (tau * tau);
                }
            }
            if (gt) (*gt)[h] += dtau;
            if (!gx) continue;
            // Gradients w.r.t. normalized q̂ and k̂, then through the L2 norms.
            std::fill(dqh.begin(), dqh.end(), 0.0);
            std::fill(dkh.begin(), dkh.end(), 0.0);
            std::vector<double> sq(d, 0.0), sk(d, 0.0);
            for (std::size_t n = 0; n < N; ++n) {
                const double* row = X + n * C3;
                double* dq = dqh.data() + n * d;
                double* dk = dkh.data() + n * d;
                for (int i = 0; i < d; ++i) {
                    const double qh = row[q0 + i] / st.nq[i];
                    for (int j = 0; j < d; ++j) {
                        const double s = dS[i * d + j];
                        dq[i] += s * row[k0 + j] / st.nk[j];
                        dk[j] += s * qh;
                    }
                }
                for (int i = 0; i < d; ++i) {
                    sq[i] += dq[i] * row[q0 + i] / st.nq[i];
                    sk[i] += dk[i] * row[k0 + i] / st.nk[i];
                }
            }
            for (std::size_t n = 0; n < N; ++n) {
                const double* row = X + n * C3;
                double* g = gx->data() + n * C3;
                for (int i = 0; i < d; ++i) {
                    const double qh = row[q0 + i] / st.nq[i];
                    const double kh = row[k0 + i] / st.nk[i];
                    g[q0 + i] += (dqh[n * d + i] - qh * sq[i]) / st.nq[i];
                    g[k0 + i] += (dkh[n * d + i] - kh * sk[i]) / st.nk[i];
                }
            }
        }
    });
}

Var temporal_blend(const Var& x, const std::vector<unsigned char>& mask,
                   const std::vector<double>& weights) {
    const Tensor& xv = x.value();
    require_rank4(xv, "temporal_blend");
    const int T = xv.frames(), H = xv.height(), W = xv.width(), C = xv.channels();
    if (mask.size() != static_cast<std::size_t>(H) * W) {
        fail(ErrorKind::ShapeMismatch, "blend mask must be H×W");
    }
    const int w = static_cast<int>(weights.size());
    if (w < 1) fail(ErrorKind::ShapeMismatch, "blend needs at least one weight");
    Tensor out(xv.shape());
    for (int k = 0; k < T; ++k) {
        for (int y = 0; y < H; ++y) {
            for (int xx = 0; xx < W; ++xx) {
                double* o = out.data() + out.offset(k, y, xx, 0);
                if (mask[static_cast<std::size_t>(y) * W + xx]) {
                    std::copy_n(xv.data() + xv.offset(k, y, xx, 0), C, o);
                    continue;
                }
                std::fill_n(o, C, 0.0);
                for (int i = 0; i < w; ++i) {
                    const int src = std::max(k - w + 1 + i, 0);
                    const double* in = xv.data() + xv.offset(src, y, xx, 0);
                    for (int c = 0; c < C; ++c) o[c] += weights[i] * in[c];
                }
            }
        }
    }
    return make_result(std::move(out), {x}, [=](Node& n) {
        Tensor* g = parent_grad(n, 0);
        if (!g) return;
        for (int k = 0; k < T; ++k) {
            for (int y = 0; y < H; ++y) {
                for (int xx = 0; xx < W; ++xx) {
                    const double* go = n.grad.data() + n.grad.offset(k, y, xx, 0);
                    if (mask[static_cast<std::size_t>(y) * W + xx]) {
                        double* gi = g->data() + g->offset(k, y, xx, 0);
                        for (int c = 0; c < C; ++c) gi[c] += go[c];
                        continue;
                    }
                    for (int i = 0; i < w; ++i) {
                        const int src = std::max(k - w + 1 + i, 0);
                        double* gi = g->data() + g->offset(src, y, xx, 0);
                        for (int c = 0; c < C; ++c) gi[c] += weights[i] * go[c];
                    }
                }
            }
        }
    });
}

Var sum(const Var& x) {
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    return make_result(Tensor({1}, {total}), {x}, [](Node& n) {
        if (Tensor* g = parent_grad(n, 0)) {
            for (double& v : g->values()) v += n.grad[0];
        }
    });
}

Var charbonnier(const Var& pred, const Var& target, double eps) {
    require_same(pred.value(), target.value(), "charbonnier");
    const Tensor& p = pred.value();
    const Tensor& q = target.value();
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = p[i] - q[i];
        sum += std::sqrt(d * d + eps * eps);
    }
    const double count = static_cast<double>(p.size());
    return make_result(Tensor({1}, {sum / count}), {pred, target}, [eps, count](Node& n) {
        const Tensor& p = parent_value(n, 0);
        const Tensor& q = parent_value(n, 1);
        const double g = n.grad[0] / count;
        Tensor* gp = parent_grad(n, 0);
        Tensor* gq = parent_grad(n, 1);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double d = p[i] - q[i];
            const double dv = g * d / std::sqrt(d * d + eps * eps);
            if (gp) (*gp)[i] += dv;
            if (gq) (*gq)[i] -= dv;
        }
    });
}

}  // namespace pmr::nn::ops
