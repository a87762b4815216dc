#include "fsrel/autodiff.hpp"

#include <cmath>
#include <string>

#include "fsrel/errors.hpp"

namespace fsrel::ad {

namespace {

void require_shape(bool ok, const char* op, const Mat& a, const Mat& b) {
    if (!ok)
        throw ContractViolation(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
}

}  // namespace

Parameter& ParameterStore::add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable) {
    if (find(name)) throw ContractViolation("duplicate parameter name " + name);
    auto p = std::make_unique<Parameter>();
    p->name = std::move(name);
    p->value = Mat::Zero(rows, cols);
    p->grad = Mat::Zero(rows, cols);
    p->trainable = trainable;
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

Eigen::Index ParameterStore::scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

Var Tape::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Mat Tape::grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

Mat& Tape::grad_of(int id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Tape::constant(Mat value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(Parameter& p) {
    Node n;
    n.op = Op::Param;
    n.p = &p;
    n.value = p.value;
    return push(std::move(n));
}

Var Tape::param_row(Parameter& p, Eigen::Index row) {
    if (row < 0 || row >= p.value.rows()) throw ContractViolation("param_row: row out of range for " + p.name);
    Node n;
    n.op = Op::ParamRow;
    n.p = &p;
    n.i0 = row;
    n.value = p.value.row(row).transpose();
    return push(std::move(n));
}

Var Tape::param_head(Parameter& p, Eigen::Index count) {
    if (count < 1 || count > p.value.rows()) throw ContractViolation("param_head: length out of range for " + p.name);
    Node n;
    n.op = Op::ParamHead;
    n.p = &p;
    n.i0 = count;
    n.value = p.value.topRows(count);
    return push(std::move(n));
}

Var Tape::affine(Parameter& w, Var x, Parameter* b) {
    const Mat& xv = value(x);
    require_shape(w.value.cols() == xv.rows(), "affine", w.value, xv);
    Node n;
    n.op = Op::Affine;
    n.p = &w;
    n.p2 = b;
    n.a = x.id;
    n.value.noalias() = w.value * xv;
    if (b) n.value.colwise() += b->value.col(0);
    return push(std::move(n));
}

Var Tape::linear_cols(Parameter& w, Eigen::Index offset, Var x, Parameter* b) {
    const Mat& xv = value(x);
    if (offset < 0 || offset + xv.rows() > w.value.cols())
        throw ContractViolation("linear_cols: column block out of range for " + w.name);
    Node n;
    n.op = Op::LinearCols;
    n.p = &w;
    n.p2 = b;
    n.a = x.id;
    n.i0 = offset;
    n.value.noalias() = w.value.middleCols(offset, xv.rows()) * xv;
    if (b) n.value.colwise() += b->value.col(0);
    return push(std::move(n));
}

Var Tape::add_bias(Var x, Parameter& b) {
    const Mat& xv = value(x);
    require_shape(b.value.rows() == xv.rows(), "add_bias", xv, b.value);
    Node n;
    n.op = Op::AddBias;
    n.p = &b;
    n.a = x.id;
    n.value = xv;
    n.value.colwise() += b.value.col(0);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    require_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add", value(a), value(b));
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = value(a) + value(b);
    return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
    require_shape(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "sub", value(a), value(b));
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.value = value(a) - value(b);
    return push(std::move(n));
}

Var Tape::neg(Var a) {
    Node n;
    n.op = Op::Neg;
    n.a = a.id;
    n.value = -value(a);
    return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.s = s;
    n.value = s * value(a);
    return push(std::move(n));
}

Var Tape::tanh(Var a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.value = value(a).array().tanh().matrix();
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    require_shape(value(a).cols() == value(b).rows(), "matmul", value(a), value(b));
    Node n;
    n.op = Op::Matmul;
    n.a = a.id;
    n.b = b.id;
    n.value.noalias() = value(a) * value(b);
    return push(std::move(n));
}

Var Tape::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.a = a.id;
    n.value = value(a).transpose();
    return push(std::move(n));
}

Var Tape::hadamard_bcast(Var v, Var m) {
    const Mat& vv = value(v);
    const Mat& mv = value(m);
    require_shape(vv.cols() == 1 && vv.rows() == mv.rows(), "hadamard_bcast", vv, mv);
    Node n;
    n.op = Op::HadamardBcast;
    n.a = v.id;
    n.b = m.id;
    n.value = (mv.array().colwise() * vv.col(0).array()).matrix();
    return push(std::move(n));
}

Var Tape::hstack(std::span<const Var> parts) {
    if (parts.empty()) throw ContractViolation("hstack: no inputs");
    const Eigen::Index rows = value(parts[0]).rows();
    Eigen::Index cols = 0;
    for (Var p : parts) {
        require_shape(value(p).rows() == rows, "hstack", value(parts[0]), value(p));
        cols += value(p).cols();
    }
    Node n;
    n.op = Op::HStack;
    n.value.resize(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        const Mat& pv = value(p);
        n.value.middleCols(at, pv.cols()) = pv;
        at += pv.cols();
        n.many.push_back(p.id);
    }
    return push(std::move(n));
}

Var Tape::vstack(std::span<const Var> parts) {
    if (parts.empty()) throw ContractViolation("vstack: no inputs");
    const Eigen::Index cols = value(parts[0]).cols();
    Eigen::Index rows = 0;
    for (Var p : parts) {
        require_shape(value(p).cols() == cols, "vstack", value(parts[0]), value(p));
        rows += value(p).rows();
    }
    Node n;
    n.op = Op::VStack;
    n.value.resize(rows, cols);
    Eigen::Index at = 0;
    for (Var p : parts) {
        const Mat& pv = value(p);
        n.value.middleRows(at, pv.rows()) = pv;
        at += pv.rows();
        n.many.push_back(p.id);
    }
    return push(std::move(n));
}

Var Tape::col(Var a, Eigen::Index j) {
    if (j < 0 || j >= value(a).cols()) throw ContractViolation("col: index out of range");
    Node n;
    n.op = Op::Col;
    n.a = a.id;
    n.i0 = j;
    n.value = value(a).col(j);
    return push(std::move(n));
}

Var Tape::softmax(Var a) {
    const Mat& av = value(a);
    if (av.size() == 0) throw ContractViolation("softmax: empty input");
    Node n;
    n.op = Op::Softmax;
    n.a = a.id;
    const double m = av.maxCoeff();
    n.value = (av.array() - m).exp().matrix();
    n.value /= n.value.sum();
    return push(std::move(n));
}

Var Tape::standardize_cols(Var a, double eps) {
    const Mat& av = value(a);
    if (av.rows() < 2) throw ContractViolation("standardize_cols: need at least two rows");
    Node n;
    n.op = Op::StandardizeCols;
    n.a = a.id;
    const auto d = static_cast<double>(av.rows());
    n.value = av.rowwise() - av.colwise().mean();
    n.aux = ((n.value.array().square().colwise().sum() / d) + eps).sqrt().inverse().matrix();  // 1 x cols
    n.value = n.value.array().rowwise() * n.aux.row(0).array();
    return push(std::move(n));
}

Var Tape::sq_dist_cols(Var q, Var p) {
    const Mat& qv = value(q);
    const Mat& pv = value(p);
    require_shape(qv.cols() == 1 && qv.rows() == pv.rows(), "sq_dist_cols", qv, pv);
    Node n;
    n.op = Op::SqDistCols;
    n.a = q.id;
    n.b = p.id;
    n.value = (pv.colwise() - qv.col(0)).colwise().squaredNorm();
    return push(std::move(n));
}

Var Tape::dot_const(Var a, const Mat& w) {
    require_shape(value(a).rows() == w.rows() && value(a).cols() == w.cols(), "dot_const", value(a), w);
    Node n;
    n.op = Op::DotConst;
    n.a = a.id;
    n.aux = w;
    n.value = Mat::Constant(1, 1, value(a).cwiseProduct(w).sum());
    return push(std::move(n));
}

Var Tape::nll_softmax(Var logits, Eigen::Index index) {
    const Mat& z = value(logits);
    if (z.cols() != 1 || index < 0 || index >= z.rows()) throw ContractViolation("nll_softmax: bad logits or index");
    Node n;
    n.op = Op::NllSoftmax;
    n.a = logits.id;
    n.i0 = index;
    const double m = z.maxCoeff();
    Vec e = (z.col(0).array() - m).exp().matrix();
    const double sum = e.sum();
    n.aux = e / sum;  // softmax probabilities
    n.value = Mat::Constant(1, 1, m + std::log(sum) - z(index, 0));
    return push(std::move(n));
}

Var Tape::cross_entropy_cols(Var logits, std::span<const int> labels) {
    const Mat& z = value(logits);
    if (static_cast<Eigen::Index>(labels.size()) != z.cols() || z.cols() == 0)
        throw ContractViolation("cross_entropy_cols: one label per column required");
    Node n;
    n.op = Op::CrossEntropyCols;
    n.a = logits.id;
    n.aux.resize(z.rows(), z.cols());
    double total = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const int y = labels[c];
        if (y < 0 || y >= z.rows()) throw ContractViolation("cross_entropy_cols: label out of range");
        const double m = z.col(c).maxCoeff();
        Vec e = (z.col(c).array() - m).exp().matrix();
        const double sum = e.sum();
        n.aux.col(c) = e / sum;
        total += m + std::log(sum) - z(y, c);
        n.many.push_back(y);
    }
    n.value = Mat::Constant(1, 1, total / static_cast<double>(z.cols()));
    return push(std::move(n));
}

Var Tape::kl_to_softmax(const Vec& target, Var logits, double eps) {
    const Mat& z = value(logits);
    if (z.cols() != 1 || z.rows() != target.size()) throw ContractViolation("kl_to_softmax: shape mismatch");
    Node n;
    n.op = Op::KlToSoftmax;
    n.a = logits.id;
    n.s = eps;
    const double m = z.maxCoeff();
    Vec prob = (z.col(0).array() - m).exp().matrix();
    prob /= prob.sum();
    n.aux.resize(z.rows(), 2);
    n.aux.col(0) = target;
    n.aux.col(1) = prob;
    double kl = 0.0;
    for (Eigen::Index c = 0; c < target.size(); ++c) {
        if (target[c] <= 0.0) continue;
        kl += target[c] * (std::log(std::max(target[c], eps)) - std::log(std::max(prob[c], eps)));
    }
    n.value = Mat::Constant(1, 1, kl);
    return push(std::move(n));
}

void Tape::backward(Var root) {
    if (value(root).size() != 1) throw ContractViolation("backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad_of(root.id).setOnes();
    for (int id = root.id; id >= 0; --id)
        if (nodes_[id].grad.size() != 0) backprop(id);
}

void Tape::backprop(int id) {
    // Copy what we need from the node: grad_of() on inputs never reallocates nodes_,
    // but keeping the reference pattern explicit avoids aliasing surprises.
    Node& n = nodes_[id];
    const Mat& g = n.grad;
    switch (n.op) {
        case Op::Constant:
            break;
        case Op::Param:
            if (n.p->trainable) n.p->grad += g;
            break;
        case Op::ParamRow:
            if (n.p->trainable) n.p->grad.row(n.i0) += g.col(0).transpose();
            break;
        case Op::ParamHead:
            if (n.p->trainable) n.p->grad.topRows(n.i0) += g;
            break;
        case Op::Affine: {
            const Mat& x = nodes_[n.a].value;
            if (n.p->trainable) n.p->grad.noalias() += g * x.transpose();
            if (n.p2 && n.p2->trainable) n.p2->grad.col(0) += g.rowwise().sum();
            grad_of(n.a).noalias() += n.p->value.transpose() * g;
            break;
        }
        case Op::LinearCols: {
            const Mat& x = nodes_[n.a].value;
            const Eigen::Index w = x.rows();
            if (n.p->trainable) n.p->grad.middleCols(n.i0, w).noalias() += g * x.transpose();
            if (n.p2 && n.p2->trainable) n.p2->grad.col(0) += g.rowwise().sum();
            grad_of(n.a).noalias() += n.p->value.middleCols(n.i0, w).transpose() * g;
            break;
        }
        case Op::AddBias:
            if (n.p->trainable) n.p->grad.col(0) += g.rowwise().sum();
            grad_of(n.a) += g;
            break;
        case Op::Add:
            grad_of(n.a) += g;
            grad_of(n.b) += g;
            break;
        case Op::Sub:
            grad_of(n.a) += g;
            grad_of(n.b) -= g;
            break;
        case Op::Neg:
            grad_of(n.a) -= g;
            break;
        case Op::Scale:
            grad_of(n.a) += n.s * g;
            break;
        case Op::Tanh:
            grad_of(n.a).array() += g.array() * (1.0 - n.value.array().square());
            break;
        case Op::Matmul: {
            const Mat& av = nodes_[n.a].value;
            const Mat& bv = nodes_[n.b].value;
            grad_of(n.a).noalias() += g * bv.transpose();
            grad_of(n.b).noalias() += av.transpose() * g;
            break;
        }
        case Op::Transpose:
            grad_of(n.a) += g.transpose();
            break;
        case Op::HadamardBcast: {
            const Mat& vv = nodes_[n.a].value;
            const Mat& mv = nodes_[n.b].value;
            grad_of(n.a).col(0) += (g.array() * mv.array()).rowwise().sum().matrix();
            grad_of(n.b).array() += g.array().colwise() * vv.col(0).array();
            break;
        }
        case Op::HStack: {
            Eigen::Index at = 0;
            for (int part : n.many) {
                const Eigen::Index c = nodes_[part].value.cols();
                grad_of(part) += g.middleCols(at, c);
                at += c;
            }
            break;
        }
        case Op::VStack: {
            Eigen::Index at = 0;
            for (int part : n.many) {
                const Eigen::Index r = nodes_[part].value.rows();
                grad_of(part) += g.middleRows(at, r);
                at += r;
            }
            break;
        }
        case Op::Col:
            grad_of(n.a).col(n.i0) += g.col(0);
            break;
        case Op::Softmax: {
            const double dot = g.cwiseProduct(n.value).sum();
            grad_of(n.a).array() += n.value.array() * (g.array() - dot);
            break;
        }
        case Op::StandardizeCols: {
            const Mat& y = n.value;
            const Mat g_mean = g.colwise().mean();
            const Mat gy_mean = g.cwiseProduct(y).colwise().mean();
            Mat dx = (g.rowwise() - g_mean.row(0)) - (y.array().rowwise() * gy_mean.row(0).array()).matrix();
            grad_of(n.a) += (dx.array().rowwise() * n.aux.row(0).array()).matrix();
            break;
        }
        case Op::SqDistCols: {
            const Mat& qv = nodes_[n.a].value;
            const Mat& pv = nodes_[n.b].value;
            Mat diff = pv.colwise() - qv.col(0);                  // d x k
            Mat weighted = diff.array().rowwise() * (2.0 * g.row(0).array());
            grad_of(n.b) += weighted;
            grad_of(n.a).col(0) -= weighted.rowwise().sum();
            break;
        }
        case Op::DotConst:
            grad_of(n.a) += g(0, 0) * n.aux;
            break;
        case Op::NllSoftmax: {
            Mat d = n.aux;
            d(n.i0, 0) -= 1.0;
            grad_of(n.a) += g(0, 0) * d;
            break;
        }
        case Op::CrossEntropyCols: {
            Mat d = n.aux;
            for (Eigen::Index c = 0; c < d.cols(); ++c) d(n.many[c], c) -= 1.0;
            grad_of(n.a) += (g(0, 0) / static_cast<double>(d.cols())) * d;
            break;
        }
        case Op::KlToSoftmax: {
            const auto t = n.aux.col(0);
            const auto prob = n.aux.col(1);
            Vec dp = Vec::Zero(t.size());
            for (Eigen::Index c = 0; c < t.size(); ++c)
                if (t[c] > 0.0 && prob[c] > n.s) dp[c] = -t[c] / prob[c];
            const double dot = dp.dot(prob);
            grad_of(n.a).col(0) += g(0, 0) * (prob.array() * (dp.array() - dot)).matrix();
            break;
        }
    }
}

}  // namespace fsrel::ad
