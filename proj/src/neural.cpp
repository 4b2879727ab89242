#include "bpmot/neural.hpp"

#include "bpmot/errors.hpp"

#include <atomic>
#include <cmath>

namespace bpmot::nn {
namespace {

std::atomic<long> g_forward_calls{0};

void apply_activation(Activation a, Mat& y) {
    switch (a) {
        case Activation::Relu: y = y.cwiseMax(0.0); break;
        case Activation::Tanh: y = y.array().tanh().matrix(); break;
        case Activation::Identity: break;
    }
}

// Derivative expressed through the activation output.
Mat activation_grad(Activation a, const Mat& y, const Mat& dy) {
    switch (a) {
        case Activation::Relu: return (y.array() > 0.0).select(dy, 0.0);
        case Activation::Tanh: return (dy.array() * (1.0 - y.array().square())).matrix();
        case Activation::Identity: return dy;
    }
    return dy;
}

Mat sigmoid_mat(const Mat& a) { return a.unaryExpr([](double v) { return sigmoid(v); }); }

Mat uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
    Mat m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = rng.uniform(-bound, bound);
    }
    return m;
}

void push(std::vector<TensorRef>& out, const std::string& name, Mat& m) {
    out.push_back({name, m.data(), m.rows(), m.cols()});
}

void push(std::vector<TensorRef>& out, const std::string& name, Vec& v) {
    out.push_back({name, v.data(), v.size(), 1});
}

}  // namespace

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
        case Activation::Identity: return "identity";
    }
    return "identity";
}

Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    if (s == "identity") return Activation::Identity;
    throw Error(ErrorCode::SchemaMismatch, "unknown activation: " + s);
}

Mat mlp_forward(const Mlp& net, const Mat& x, MlpTape* tape) {
    g_forward_calls.fetch_add(1, std::memory_order_relaxed);
    if (net.layers.empty()) return x;
    if (x.rows() != net.in_dim()) {
        throw Error(ErrorCode::DimensionMismatch, "mlp_forward: input has " + std::to_string(x.rows()) +
                                                      " rows, expected " + std::to_string(net.in_dim()));
    }
    if (tape) {
        tape->inputs.clear();
        tape->outputs.clear();
    }
    Mat cur = x;
    for (const auto& layer : net.layers) {
        Mat y = layer.weight * cur;
        y.colwise() += layer.bias;
        apply_activation(layer.activation, y);
        if (tape) {
            tape->inputs.push_back(std::move(cur));
            tape->outputs.push_back(y);
        }
        cur = std::move(y);
    }
    return cur;
}

Mat mlp_backward(const Mlp& net, const MlpTape& tape, const Mat& dy, Mlp& grads) {
    Mat d = dy;
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const auto& layer = net.layers[l];
        const Mat da = activation_grad(layer.activation, tape.outputs[l], d);
        grads.layers[l].weight.noalias() += da * tape.inputs[l].transpose();
        grads.layers[l].bias += da.rowwise().sum();
        d = layer.weight.transpose() * da;
    }
    return d;
}

Mat gru_forward(const GruParams& p, const Mat& u, const Mat& h, GruTape* tape) {
    g_forward_calls.fetch_add(1, std::memory_order_relaxed);
    if (u.rows() != p.input_dim() || h.rows() != p.hidden_dim() || u.cols() != h.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "gru_forward: dimension mismatch");
    }
    Mat az = p.wz * u + p.uz * h;
    az.colwise() += p.bz;
    Mat ar = p.wr * u + p.ur * h;
    ar.colwise() += p.br;
    const Mat z = sigmoid_mat(az);
    const Mat r = sigmoid_mat(ar);
    Mat ac = p.wh * u + p.uh * r.cwiseProduct(h);
    ac.colwise() += p.bh;
    const Mat c = ac.array().tanh().matrix();
    Mat out = ((1.0 - z.array()) * h.array() + z.array() * c.array()).matrix();
    if (tape) {
        tape->u = u;
        tape->h = h;
        tape->z = z;
        tape->r = r;
        tape->c = c;
    }
    return out;
}

void gru_backward(const GruParams& p, const GruTape& t, const Mat& g, GruParams& grads, Mat& du, Mat& dh) {
    const Mat dz = (g.array() * (t.c.array() - t.h.array())).matrix();
    const Mat dc = (g.array() * t.z.array()).matrix();
    dh = (g.array() * (1.0 - t.z.array())).matrix();

    const Mat dac = (dc.array() * (1.0 - t.c.array().square())).matrix();
    const Mat rh = t.r.cwiseProduct(t.h);
    grads.wh.noalias() += dac * t.u.transpose();
    grads.uh.noalias() += dac * rh.transpose();
    grads.bh += dac.rowwise().sum();
    du = p.wh.transpose() * dac;
    const Mat drh = p.uh.transpose() * dac;
    const Mat dr = drh.cwiseProduct(t.h);
    dh += drh.cwiseProduct(t.r);

    const Mat daz = (dz.array() * t.z.array() * (1.0 - t.z.array())).matrix();
    grads.wz.noalias() += daz * t.u.transpose();
    grads.uz.noalias() += daz * t.h.transpose();
    grads.bz += daz.rowwise().sum();
    du.noalias() += p.wz.transpose() * daz;
    dh.noalias() += p.uz.transpose() * daz;

    const Mat dar = (dr.array() * t.r.array() * (1.0 - t.r.array())).matrix();
    grads.wr.noalias() += dar * t.u.transpose();
    grads.ur.noalias() += dar * t.h.transpose();
    grads.br += dar.rowwise().sum();
    du.noalias() += p.wr.transpose() * dar;
    dh.noalias() += p.ur.transpose() * dar;
}

Mlp make_mlp(const std::vector<int>& dims, Activation hidden, Activation output, Rng& rng) {
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        DenseLayer layer;
        layer.weight = uniform_matrix(dims[l + 1], dims[l], bound, rng);
        layer.bias = uniform_matrix(dims[l + 1], 1, bound, rng);
        layer.activation = l + 2 == dims.size() ? output : hidden;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

GruParams make_gru(int input_dim, int hidden_dim, Rng& rng) {
    const double bw = 1.0 / std::sqrt(static_cast<double>(input_dim));
    const double bu = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    GruParams p;
    p.wz = uniform_matrix(hidden_dim, input_dim, bw, rng);
    p.uz = uniform_matrix(hidden_dim, hidden_dim, bu, rng);
    p.bz = uniform_matrix(hidden_dim, 1, bw, rng);
    p.wr = uniform_matrix(hidden_dim, input_dim, bw, rng);
    p.ur = uniform_matrix(hidden_dim, hidden_dim, bu, rng);
    p.br = uniform_matrix(hidden_dim, 1, bw, rng);
    p.wh = uniform_matrix(hidden_dim, input_dim, bw, rng);
    p.uh = uniform_matrix(hidden_dim, hidden_dim, bu, rng);
    p.bh = uniform_matrix(hidden_dim, 1, bw, rng);
    return p;
}

Mlp zeros_like(const Mlp& net) {
    Mlp z = net;
    for (auto& l : z.layers) {
        l.weight.setZero();
        l.bias.setZero();
    }
    return z;
}

GruParams zeros_like(const GruParams& p) {
    GruParams z = p;
    for (Mat* m : {&z.wz, &z.uz, &z.wr, &z.ur, &z.wh, &z.uh}) m->setZero();
    for (Vec* v : {&z.bz, &z.br, &z.bh}) v->setZero();
    return z;
}

long forward_call_count() { return g_forward_calls.load(); }
void reset_forward_call_count() { g_forward_calls.store(0); }

void collect(Mlp& net, const std::string& prefix, std::vector<TensorRef>& out) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const std::string base = prefix + ".layer" + std::to_string(l);
        push(out, base + ".weight", net.layers[l].weight);
        push(out, base + ".bias", net.layers[l].bias);
    }
}

void collect(GruParams& p, const std::string& prefix, std::vector<TensorRef>& out) {
    push(out, prefix + ".wz", p.wz);
    push(out, prefix + ".uz", p.uz);
    push(out, prefix + ".bz", p.bz);
    push(out, prefix + ".wr", p.wr);
    push(out, prefix + ".ur", p.ur);
    push(out, prefix + ".br", p.br);
    push(out, prefix + ".wh", p.wh);
    push(out, prefix + ".uh", p.uh);
    push(out, prefix + ".bh", p.bh);
}

void adam_step(const std::vector<TensorRef>& params, const std::vector<TensorRef>& grads, AdamState& st) {
    if (params.size() != grads.size()) {
        throw Error(ErrorCode::ShapeMismatch, "adam_step: parameter/gradient count mismatch");
    }
    if (st.m.size() != params.size()) {
        st.m.clear();
        st.v.clear();
        for (const auto& p : params) {
            st.m.push_back(Vec::Zero(p.size()));
            st.v.push_back(Vec::Zero(p.size()));
        }
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k].size() != grads[k].size() || st.m[k].size() != params[k].size()) {
            throw Error(ErrorCode::ShapeMismatch, "adam_step: shape mismatch for " + params[k].name);
        }
        Eigen::Map<Vec> p(params[k].data, params[k].size());
        Eigen::Map<const Vec> g(grads[k].data, grads[k].size());
        st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
        st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g.cwiseProduct(g);
        p.array() -= st.lr * (st.m[k].array() / bc1) / ((st.v[k].array() / bc2).sqrt() + st.eps);
    }
}

}  // namespace bpmot::nn
