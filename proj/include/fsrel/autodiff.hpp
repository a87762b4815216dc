#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace fsrel::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// A named trainable tensor. Vectors are stored as single-column matrices.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;
    bool trainable = true;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    // Prefix of the name up to the first '.', used for per-group gradient norms.
    std::string group() const { return name.substr(0, name.find('.')); }
};

// Address-stable owner of every parameter of a model.
class ParameterStore {
public:
    Parameter& add(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable = true);
    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;

    std::span<const std::unique_ptr<Parameter>> all() const { return params_; }
    void zero_grad();
    std::size_t size() const { return params_.size(); }
    Eigen::Index scalar_count() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Every node owns its forward value; grads
// are allocated lazily during backward(). Parameters referenced by nodes must
// outlive the tape.
class Tape {
public:
    Tape() { nodes_.reserve(1024); }

    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

    const Mat& value(Var v) const { return nodes_[v.id].value; }
    double scalar(Var v) const { return nodes_[v.id].value(0, 0); }
    // Gradient w.r.t. a node after backward(); zero matrix if the node was not reached.
    Mat grad(Var v) const;

    // Leaves.
    Var constant(Mat value);
    Var param(Parameter& p);
    Var param_row(Parameter& p, Eigen::Index row);           // row as a column vector
    Var param_head(Parameter& p, Eigen::Index n);            // first n rows

    // W x (+ b broadcast over columns).
    Var affine(Parameter& w, Var x, Parameter* b = nullptr);
    // W[:, offset : offset + rows(x)] x (+ b).
    Var linear_cols(Parameter& w, Eigen::Index offset, Var x, Parameter* b = nullptr);
    Var add_bias(Var x, Parameter& b);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double s);
    Var tanh(Var a);
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    // v (n x 1) broadcast elementwise against every column of m (n x k).
    Var hadamard_bcast(Var v, Var m);
    Var hstack(std::span<const Var> parts);
    Var vstack(std::span<const Var> parts);
    Var col(Var a, Eigen::Index j);
    // Softmax over all entries, shape preserved.
    Var softmax(Var a);
    // Per column: subtract the mean and divide by sqrt(variance + eps); no learned scale.
    Var standardize_cols(Var a, double eps = 1e-5);
    // 1 x k row of squared Euclidean distances between q (d x 1) and columns of p (d x k).
    Var sq_dist_cols(Var q, Var p);
    // Scalar sum(a .* w) for a constant weight matrix of the same shape.
    Var dot_const(Var a, const Mat& w);
    // -log softmax(z)[index] for a column of logits.
    Var nll_softmax(Var logits, Eigen::Index index);
    // Mean over columns of -log softmax(col)[label].
    Var cross_entropy_cols(Var logits, std::span<const int> labels);
    // sum_c t_c (log max(t_c, eps) - log max(softmax(z)_c, eps)); t is a constant.
    Var kl_to_softmax(const Vec& target, Var logits, double eps = 1e-8);

    // Seeds d(root)/d(root) = 1 and accumulates into trainable Parameter::grad.
    void backward(Var root);

private:
    enum class Op : unsigned char {
        Constant, Param, ParamRow, ParamHead, Affine, LinearCols, AddBias, Add, Sub, Neg, Scale, Tanh,
        Matmul, Transpose, HadamardBcast, HStack, VStack, Col, Softmax, StandardizeCols, SqDistCols, DotConst, NllSoftmax,
        CrossEntropyCols, KlToSoftmax
    };
    struct Node {
        Op op = Op::Constant;
        int a = -1;
        int b = -1;
        Parameter* p = nullptr;
        Parameter* p2 = nullptr;
        Eigen::Index i0 = 0;
        double s = 0.0;
        Mat value;
        Mat grad;
        Mat aux;
        std::vector<int> many;
    };

    Var push(Node&& n);
    Mat& grad_of(int id);
    void backprop(int id);

    std::vector<Node> nodes_;
};

}  // namespace fsrel::ad
