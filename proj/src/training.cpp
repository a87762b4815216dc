#include "fsrel/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "fsrel/hash.hpp"

namespace fsrel {

using ad::Mat;
using ad::Var;
using Eigen::VectorXd;

namespace {

double log_softmax_at(const VectorXd& z, Eigen::Index i) {
    const double m = z.maxCoeff();
    return z[i] - m - std::log((z.array() - m).exp().sum());
}

}  // namespace

double relation_loss(std::span<const VectorXd> distances, std::span<const int> positives) {
    if (distances.size() != positives.size()) throw ContractViolation("relation_loss: one positive per query");
    if (distances.empty()) throw ContractViolation("relation_loss: no queries");
    double sum = 0.0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        const auto& d = distances[i];
        if (d.size() == 0) throw ContractViolation("relation_loss: empty candidate set");
        if (positives[i] < 0 || positives[i] >= d.size()) throw ContractViolation("relation_loss: positive out of range");
        sum -= log_softmax_at(-d, positives[i]);
    }
    return sum / static_cast<double>(distances.size());
}

double kl_divergence(const VectorXd& p, const VectorXd& q, double eps) {
    if (p.size() != q.size() || p.size() == 0) throw ContractViolation("kl_divergence: shape mismatch");
    double sum = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c)
        sum += p[c] * (std::log(std::max(p[c], eps)) - std::log(std::max(q[c], eps)));
    return sum;
}

double kl_loss(std::span<const VectorXd> y_hat, std::span<const VectorXd> y_pro, double eps) {
    if (y_hat.size() != y_pro.size()) throw ContractViolation("kl_loss: query count mismatch");
    if (y_hat.empty()) throw ContractViolation("kl_loss: no queries");
    double sum = 0.0;
    for (std::size_t i = 0; i < y_hat.size(); ++i) sum += kl_divergence(y_hat[i], y_pro[i], eps);
    return sum / static_cast<double>(y_hat.size());
}

double object_loss(const Eigen::MatrixXd& logits, std::span<const int> labels) {
    if (logits.cols() != static_cast<Eigen::Index>(labels.size())) throw ContractViolation("object_loss: label count mismatch");
    if (labels.empty()) throw ContractViolation("object_loss: no objects");
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= logits.rows())
            throw VocabularyError("object_loss: category id " + std::to_string(labels[i]) + " outside the head");
        sum -= log_softmax_at(logits.col(static_cast<Eigen::Index>(i)), labels[i]);
    }
    return sum / static_cast<double>(labels.size());
}

EpisodeForward forward_episode(ad::Tape& tape, const Model& model, const SceneGraphDataset& ds, const Episode& ep,
                               const LabelEmbedder& labels, const std::vector<VectorXd>* teacher) {
    const auto& cfg = model.config();
    if (ep.categories.empty() || ep.queries.empty()) throw ContractViolation("forward_episode: empty episode");
    if (teacher && teacher->size() != ep.queries.size())
        throw ContractViolation("forward_episode: teacher needs one target per query");
    const bool protos = model.uses_prototypes();

    std::set<int> image_ids;
    for (const auto& [pred, refs] : ep.supports)
        for (const auto& r : refs) image_ids.insert(r.image);
    for (const auto& q : ep.queries) image_ids.insert(q.pair.image);
    std::map<int, ImageEncoding> enc;
    std::vector<Var> all_logits;
    std::vector<int> object_labels;
    for (int img : image_ids) {
        const auto& image = ds.images.at(img);
        enc.emplace(img, encode_image(tape, model, image, img));
        all_logits.push_back(enc.at(img).object_logits);
        for (const auto& o : image.objects) object_labels.push_back(o.category.value);
    }

    struct Candidate {
        std::optional<PrototypeBank> bank;
        Var supports_final, supports_proto;
        std::vector<LabelPair> labels;
    };
    std::vector<Candidate> cands;
    for (PredicateId r : ep.categories) {
        const auto it = ep.supports.find(r);
        if (it == ep.supports.end() || it->second.empty())
            throw ContractViolation("forward_episode: predicate without supports");
        Candidate c;
        if (protos) c.bank = build_bank_for(tape, model, ds, r, it->second);
        std::vector<Var> fin, pro;
        for (const auto& ref : it->second) {
            const PairRef p = pair_of(ds, ref);
            const auto& e = enc.at(p.image);
            auto emb = embed_pair(tape, model, e, p.subject, p.object, c.bank ? &*c.bank : nullptr);
            fin.push_back(emb.final);
            if (protos) pro.push_back(emb.prototype);
            const auto& objs = ds.images[p.image].objects;
            c.labels.emplace_back(objs[p.subject].category, objs[p.object].category);
        }
        c.supports_final = tape.hstack(fin);
        if (protos) c.supports_proto = tape.hstack(pro);
        cands.push_back(std::move(c));
    }

    const Var bg = tape.param(*model.background);
    const bool with_kl = protos && cfg.kl_loss;
    const auto k = static_cast<Eigen::Index>(cands.size());
    EpisodeForward out;
    std::vector<Var> nll, kl;
    for (std::size_t qi = 0; qi < ep.queries.size(); ++qi) {
        const auto& q = ep.queries[qi];
        const auto& e = enc.at(q.pair.image);
        const auto& objs = ds.images[q.pair.image].objects;
        const LabelPair query_labels{objs[q.pair.subject].category, objs[q.pair.object].category};
        QueryScores qs;
        std::vector<Var> logits, pro_logits;
        for (Eigen::Index r = 0; r < k; ++r) {
            auto& c = cands[r];
            auto emb = embed_pair(tape, model, e, q.pair.subject, q.pair.object, c.bank ? &*c.bank : nullptr);
            const SupportWeights w = cfg.metric == MetricMode::Reweight
                                         ? support_weights(query_labels, c.labels, labels)
                                         : SupportWeights::uniform(c.labels.size());
            logits.push_back(tape.neg(reweighted_metric(tape, pair_distances(tape, emb.final, c.supports_final), w)));
            if (protos)
                pro_logits.push_back(
                    tape.neg(reweighted_metric(tape, pair_distances(tape, emb.prototype, c.supports_proto), w)));
            qs.candidates.emplace_back(ep.categories[r]);
        }
        qs.candidates.emplace_back(std::nullopt);
        logits.push_back(tape.neg(bg));
        if (protos) pro_logits.push_back(tape.neg(bg));

        qs.positive = static_cast<int>(k);
        if (q.label) {
            const auto pos = std::find(ep.categories.begin(), ep.categories.end(), *q.label);
            if (pos == ep.categories.end()) throw ContractViolation("forward_episode: query label not in episode");
            qs.positive = static_cast<int>(pos - ep.categories.begin());
        }
        const Var z = tape.vstack(logits);
        nll.push_back(tape.nll_softmax(z, qs.positive));
        qs.distances = -tape.value(z).col(0);
        qs.y_hat = softmax(tape.value(z).col(0));
        if (protos) {
            const Var zp = tape.vstack(pro_logits);
            qs.prototype_distances = -tape.value(zp).col(0);
            qs.y_pro = softmax(tape.value(zp).col(0));
            if (with_kl) kl.push_back(tape.kl_to_softmax(teacher ? (*teacher)[qi] : qs.y_hat, zp));
        }
        out.scores.queries.push_back(std::move(qs));
    }

    const auto mean_of = [&](const std::vector<Var>& terms) {
        const Var stacked = tape.vstack(terms);
        return tape.dot_const(stacked, Mat::Constant(static_cast<Eigen::Index>(terms.size()), 1,
                                                     1.0 / static_cast<double>(terms.size())));
    };
    out.relation = mean_of(nll);
    out.kl = with_kl ? mean_of(kl) : tape.constant(Mat::Zero(1, 1));
    out.object = cfg.obj_loss ? tape.cross_entropy_cols(tape.hstack(all_logits), object_labels)
                              : tape.constant(Mat::Zero(1, 1));
    out.total = tape.add(tape.add(out.relation, out.kl), out.object);
    return out;
}

Adam::Adam(const ad::ParameterStore& store, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& p : store.all()) {
        state_.m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        state_.v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(ad::ParameterStore& store) {
    const auto params = store.all();
    if (params.size() != state_.m.size()) throw ContractViolation("Adam: parameter store changed shape");
    ++state_.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(state_.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(state_.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (!p.trainable) continue;
        auto& m = state_.m[i];
        auto& v = state_.v[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * p.grad;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }
}

nlohmann::json loss_report_to_json(std::uint64_t step, const LossReport& r) {
    return {{"step", step},         {"L_rel", r.relation}, {"L_kl", r.kl},
            {"L_obj", r.object},    {"L_total", r.total},  {"grad_norm", r.grad_norm},
            {"group_grad_norms", r.group_grad_norms}};
}

namespace {

LossReport report_from(const ad::Tape& tape, const EpisodeForward& f) {
    LossReport r;
    r.relation = tape.scalar(f.relation);
    r.kl = tape.scalar(f.kl);
    r.object = tape.scalar(f.object);
    r.total = tape.scalar(f.total);
    return r;
}

void check_finite(const LossReport& r, const Episode& ep) {
    if (!std::isfinite(r.relation) || !std::isfinite(r.kl) || !std::isfinite(r.object) || !std::isfinite(r.total)) {
        std::ostringstream msg;
        msg << "non-finite loss (L_rel=" << r.relation << ", L_kl=" << r.kl << ", L_obj=" << r.object << ")";
        throw NonFiniteLossError(msg.str(), ep);
    }
}

void check_vocabulary(const Model& model, const SceneGraphDataset& ds) {
    const auto& c = model.config();
    if (c.num_categories != static_cast<int>(ds.categories.size()) ||
        c.num_predicates != static_cast<int>(ds.predicates.size()))
        throw ConfigError("model vocabulary does not match the dataset");
}

}  // namespace

LossReport train_step(const Episode& ep, Model& model, Adam& optimizer, const SceneGraphDataset& ds,
                      const SplitSpec& split) {
    assert_base_only(ep, split);
    check_vocabulary(model, ds);
    const LabelEmbedder labels = model.label_embedder();
    ad::Tape tape;
    const auto f = forward_episode(tape, model, ds, ep, labels);
    LossReport r = report_from(tape, f);
    check_finite(r, ep);

    model.params().zero_grad();
    tape.backward(f.total);
    double total_sq = 0.0;
    std::map<std::string, double> group_sq;
    for (const auto& p : model.params().all()) {
        if (!p->trainable) continue;
        const double sq = p->grad.squaredNorm();
        total_sq += sq;
        group_sq[p->group()] += sq;
    }
    r.grad_norm = std::sqrt(total_sq);
    for (const auto& [g, sq] : group_sq) r.group_grad_norms[g] = std::sqrt(sq);
    if (!std::isfinite(r.grad_norm)) throw NonFiniteLossError("non-finite gradient", ep);
    optimizer.step(model.params());
    return r;
}

LossReport evaluate_loss(const Episode& ep, const Model& model, const SceneGraphDataset& ds) {
    check_vocabulary(model, ds);
    ad::Tape tape;
    const auto f = forward_episode(tape, model, ds, ep, model.label_embedder());
    return report_from(tape, f);
}

std::vector<GradientSample> finite_difference_check(Model& model, const SceneGraphDataset& ds, const Episode& ep,
                                                    int per_group, std::uint64_t seed, double step) {
    const LabelEmbedder labels = model.label_embedder();
    std::vector<VectorXd> teacher;
    model.params().zero_grad();
    {
        ad::Tape tape;
        const auto f = forward_episode(tape, model, ds, ep, labels);
        for (const auto& q : f.scores.queries) teacher.push_back(q.y_hat);
        tape.backward(f.total);
    }
    const auto loss_at = [&]() {
        ad::Tape tape;
        const auto f = forward_episode(tape, model, ds, ep, labels, &teacher);
        return tape.scalar(f.total);
    };

    std::map<std::string, std::vector<ad::Parameter*>> groups;
    for (const auto& p : model.params().all())
        if (p->trainable) groups[p->group()].push_back(p.get());

    std::mt19937_64 rng(seed);
    std::vector<GradientSample> out;
    for (const auto& [group, params] : groups) {
        std::vector<std::pair<ad::Parameter*, Eigen::Index>> strong, any;
        for (auto* p : params)
            for (Eigen::Index i = 0; i < p->grad.size(); ++i) {
                any.emplace_back(p, i);
                if (std::abs(p->grad.data()[i]) > 1e-5) strong.emplace_back(p, i);
            }
        auto& pool = strong.size() >= static_cast<std::size_t>(per_group) ? strong : any;
        std::shuffle(pool.begin(), pool.end(), rng);
        const auto n = std::min(pool.size(), static_cast<std::size_t>(per_group));
        for (std::size_t s = 0; s < n; ++s) {
            auto [p, i] = pool[s];
            double& x = p->value.data()[i];
            const double saved = x;
            x = saved + step;
            const double up = loss_at();
            x = saved - step;
            const double down = loss_at();
            x = saved;
            GradientSample g;
            g.parameter = p->name;
            g.index = i;
            g.analytic = p->grad.data()[i];
            g.numeric = (up - down) / (2.0 * step);
            g.rel_error = std::abs(g.analytic - g.numeric) /
                          std::max({std::abs(g.analytic), std::abs(g.numeric), 1e-6});
            out.push_back(g);
        }
    }
    model.params().zero_grad();
    return out;
}

// ---- checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'S', 'R', 'E', 'L', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

class Writer {
public:
    template <class T>
    void pod(const T& v) {
        const auto* b = reinterpret_cast<const char*>(&v);
        buf_.append(b, sizeof(T));
    }
    void str(const std::string& s) {
        pod(static_cast<std::uint64_t>(s.size()));
        buf_.append(s);
    }
    void matrix(const Mat& m) {
        pod(static_cast<std::uint64_t>(m.rows()));
        pod(static_cast<std::uint64_t>(m.cols()));
        buf_.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    std::string& buffer() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    Reader(const std::string& buf, std::size_t end) : buf_(buf), end_(end) {}
    template <class T>
    T pod() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Mat matrix() {
        const auto rows = pod<std::uint64_t>();
        const auto cols = pod<std::uint64_t>();
        if (rows > (1u << 24) || cols > (1u << 24)) throw IntegrityError("checkpoint: implausible tensor shape");
        const std::size_t bytes = sizeof(double) * rows * cols;
        need(bytes);
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        std::memcpy(m.data(), buf_.data() + pos_, bytes);
        pos_ += bytes;
        return m;
    }
    void bytes(char* dst, std::size_t n) {
        need(n);
        std::memcpy(dst, buf_.data() + pos_, n);
        pos_ += n;
    }
    bool done() const { return pos_ == end_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > end_) throw IntegrityError("checkpoint: truncated file");
    }
    const std::string& buf_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

std::uint64_t checksum(const std::string& buf, std::size_t n) {
    Fnv1a h;
    h.update(std::string_view(buf.data(), n));
    return h.digest();
}

bool same_shapes(const ModelConfig& a, const ModelConfig& b) {
    return a.d_app == b.d_app && a.d_vis == b.d_vis && a.d_ctx == b.d_ctx && a.d_txt == b.d_txt &&
           a.d_proto == b.d_proto && a.d_final == b.d_final && a.prompt_length == b.prompt_length &&
           a.hidden == b.hidden && a.text_hidden == b.text_hidden && a.num_categories == b.num_categories &&
           a.num_predicates == b.num_predicates;
}

}  // namespace

void save_checkpoint(const Model& model, const TrainingState& state, const std::filesystem::path& path) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.pod(kFormatVersion);
    w.pod(config_hash(model.config()));
    w.pod(state.step);
    w.str(model_config_to_json(model.config()).dump());
    const auto params = model.params().all();
    w.pod(static_cast<std::uint64_t>(params.size()));
    for (const auto& p : params) {
        w.str(p->name);
        w.matrix(p->value);
    }
    w.pod(static_cast<std::uint8_t>(state.optimizer ? 1 : 0));
    if (state.optimizer) {
        const auto& o = *state.optimizer;
        if (o.m.size() != params.size() || o.v.size() != params.size())
            throw ContractViolation("save_checkpoint: optimizer state does not match the model");
        w.pod(o.t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            w.matrix(o.m[i]);
            w.matrix(o.v[i]);
        }
    }
    w.str(state.rng_state);
    auto& buf = w.buffer();
    const std::uint64_t sum = checksum(buf, buf.size());
    buf.append(reinterpret_cast<const char*>(&sum), sizeof sum);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw Error("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected,
                                 bool allow_config_mismatch) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint " + path.string());
    const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof kMagic + sizeof(std::uint64_t))
        throw IntegrityError("checkpoint: file too short");
    const std::size_t body = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored_sum;
    std::memcpy(&stored_sum, buf.data() + body, sizeof stored_sum);
    if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0) throw IntegrityError("checkpoint: bad magic");
    if (checksum(buf, body) != stored_sum) throw IntegrityError("checkpoint: checksum mismatch");

    Reader r(buf, body);
    char magic[sizeof kMagic];
    r.bytes(magic, sizeof magic);
    const auto version = r.pod<std::uint32_t>();
    if (version != kFormatVersion) throw IntegrityError("checkpoint: unsupported format version " + std::to_string(version));
    const auto stored_hash = r.pod<std::uint64_t>();
    TrainingState state;
    state.step = r.pod<std::uint64_t>();
    ModelConfig stored;
    try {
        stored = model_config_from_json(nlohmann::json::parse(r.str()));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: unreadable config: ") + e.what());
    }
    if (config_hash(stored) != stored_hash) throw IntegrityError("checkpoint: config hash does not match its config");

    ModelConfig use = stored;
    if (expected) {
        if (!same_shapes(stored, *expected))
            throw ConfigError("checkpoint dimensions do not match the requested model config");
        if (config_hash(*expected) != stored_hash) {
            if (!allow_config_mismatch)
                throw ConfigError("checkpoint config hash differs from the requested config (override to load anyway)");
            use = *expected;
        }
    }

    Model model(use, 0);
    const auto n = r.pod<std::uint64_t>();
    if (n != model.params().size()) throw IntegrityError("checkpoint: parameter count mismatch");
    for (std::uint64_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        Mat value = r.matrix();
        auto* p = model.params().find(name);
        if (!p) throw IntegrityError("checkpoint: unknown parameter '" + name + "'");
        if (p->value.rows() != value.rows() || p->value.cols() != value.cols())
            throw ConfigError("checkpoint: shape mismatch for '" + name + "'");
        p->value = std::move(value);
    }
    if (r.pod<std::uint8_t>() != 0) {
        AdamState o;
        o.t = r.pod<std::uint64_t>();
        for (std::uint64_t i = 0; i < n; ++i) {
            o.m.push_back(r.matrix());
            o.v.push_back(r.matrix());
        }
        state.optimizer = std::move(o);
    }
    state.rng_state = r.str();
    if (!r.done()) throw IntegrityError("checkpoint: trailing bytes");
    return {std::move(model), std::move(state)};
}

}  // namespace fsrel
