#include "cma/heads.hpp"

#include <algorithm>
#include <cmath>

#include "cma/errors.hpp"
#include "cma/kernels.hpp"

namespace cma {
namespace {

const std::vector<Branch> kFullBranches = {Branch::text, Branch::image, Branch::concat,
                                           Branch::image_to_text, Branch::text_to_image};
const std::vector<Branch> kNoCrossBranches = {Branch::text, Branch::image, Branch::concat};
const std::vector<Branch> kConcatOnly = {Branch::concat};
const std::vector<Branch> kTextOnly = {Branch::text};
const std::vector<Branch> kImageOnly = {Branch::image};

std::size_t feature_width(Branch b, std::size_t d) { return b == Branch::concat ? 2 * d : d; }

template <typename Model, typename Fn>
void visit_params(Model& model, Fn&& fn) {
    auto attn = [&](auto& opt, const char* prefix) {
        if (!opt) return;
        fn(std::string(prefix) + ".w_q", opt->w_q.values());
        fn(std::string(prefix) + ".w_k", opt->w_k.values());
        fn(std::string(prefix) + ".w_v", opt->w_v.values());
    };
    attn(model.attn_mt, "attn_mt");
    attn(model.attn_tm, "attn_tm");
    for (Branch b : kAllBranches) {
        auto& head = model.branch(b);
        if (!head) continue;
        const std::string prefix = "branch." + std::string(branch_name(b));
        if (head->has_hidden()) {
            fn(prefix + ".hidden_w", head->hidden_w.values());
            fn(prefix + ".hidden_b", std::span(head->hidden_b));
        }
        fn(prefix + ".weights", head->weights.values());
        fn(prefix + ".bias", std::span(head->bias));
    }
    if (model.meta) {
        fn(std::string("meta.weights"), model.meta->weights.values());
        fn(std::string("meta.bias"), std::span(model.meta->bias));
    }
}

struct BranchTrace {
    Branch branch{};
    Vector feature;
    Vector hidden_pre;
    Vector hidden;
    ProbVector probs;
};

struct ForwardTrace {
    std::optional<AttentionTrace> mt;
    std::optional<AttentionTrace> tm;
    std::vector<BranchTrace> branches;
    Vector meta_input;
    ProbVector y_hat;
};

void check_width(const Matrix& tokens, std::size_t d, const char* what, const FeatureRecord& r) {
    if (tokens.rows() == 0) {
        throw DimensionError("record '" + r.id + "': empty " + what + " sequence");
    }
    if (tokens.cols() != d) {
        throw DimensionError("record '" + r.id + "': " + what + " tokens " + tokens.shape() +
                             " for model width " + std::to_string(d));
    }
}

struct HeadTrace {
    Vector hidden_pre;
    Vector hidden;
    ProbVector probs;
};

HeadTrace head_forward(std::span<const double> feature, const BranchHead& head) {
    if (feature.size() != head.in_dim()) {
        throw DimensionError("branch_forward: feature length " + std::to_string(feature.size()) +
                             " for head input " + std::to_string(head.in_dim()));
    }
    HeadTrace t;
    if (head.has_hidden()) {
        t.hidden_pre = affine(feature, head.hidden_w, head.hidden_b);
        t.hidden = t.hidden_pre;
        for (double& x : t.hidden) x = std::max(0.0, x);
        t.probs = softmax(affine(t.hidden, head.weights, head.bias));
    } else {
        t.probs = softmax(affine(feature, head.weights, head.bias));
    }
    return t;
}

ForwardTrace forward_trace(const FeatureRecord& record, const CmaModel& model) {
    const std::size_t d = model.dim;
    const auto& active = active_branches(model.variant);
    const bool needs_text = model.variant != Variant::no_text;
    const bool needs_image = model.variant != Variant::no_image;
    if (needs_text) check_width(record.text_tokens, d, "text", record);
    if (needs_image) check_width(record.image_tokens, d, "image", record);

    ForwardTrace t;
    Vector f_t, f_m;
    if (needs_text) f_t = mean_rows(record.text_tokens);
    if (needs_image) f_m = mean_rows(record.image_tokens);

    for (Branch b : active) {
        const auto& head = model.branch(b);
        if (!head) {
            throw DataError("model is missing the head for branch " + std::string(branch_name(b)));
        }
        BranchTrace bt;
        bt.branch = b;
        switch (b) {
        case Branch::text: bt.feature = f_t; break;
        case Branch::image: bt.feature = f_m; break;
        case Branch::concat: bt.feature = concat_normalized(f_t, f_m); break;
        case Branch::image_to_text:
            t.mt = cross_attend_trace(record.image_tokens, record.text_tokens, *model.attn_mt);
            bt.feature = mean_rows(t.mt->output);
            break;
        case Branch::text_to_image:
            t.tm = cross_attend_trace(record.text_tokens, record.image_tokens, *model.attn_tm);
            bt.feature = mean_rows(t.tm->output);
            break;
        }
        HeadTrace ht = head_forward(bt.feature, *head);
        bt.hidden_pre = std::move(ht.hidden_pre);
        bt.hidden = std::move(ht.hidden);
        bt.probs = std::move(ht.probs);
        t.branches.push_back(std::move(bt));
    }

    if (!model.meta) {
        t.y_hat = t.branches.front().probs;
        return t;
    }
    for (const auto& bt : t.branches) {
        const auto src = model.meta_input == MetaInput::probabilities
                             ? bt.probs.values()
                             : std::span<const double>(bt.feature);
        t.meta_input.insert(t.meta_input.end(), src.begin(), src.end());
    }
    t.y_hat = softmax(affine(t.meta_input, model.meta->weights, model.meta->bias));
    return t;
}

// dL/dp for the clamped binary cross-entropy. Only p1 enters the loss.
Vector ce_grad(Label y, const ProbVector& p) {
    const double p1 = p[1];
    Vector g(2, 0.0);
    if (p1 > kProbClamp && p1 < 1.0 - kProbClamp) g[1] = y == 1 ? -1.0 / p1 : 1.0 / (1.0 - p1);
    return g;
}

Vector softmax_backward(const ProbVector& p, std::span<const double> dp) {
    double inner = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) inner += p[k] * dp[k];
    Vector dl(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) dl[k] = p[k] * (dp[k] - inner);
    return dl;
}

void add_to(Vector& acc, std::span<const double> v) {
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
}

// Accumulates head gradients and returns dL/dfeature.
Vector head_backward(const BranchTrace& bt, const BranchHead& head, BranchHead& grad,
                     std::span<const double> d_logits) {
    add_to(grad.bias, d_logits);
    if (!head.has_hidden()) {
        kernels::add_outer(grad.weights, bt.feature, d_logits);
        return kernels::matvec(head.weights, d_logits);
    }
    kernels::add_outer(grad.weights, bt.hidden, d_logits);
    Vector d_hidden = kernels::matvec(head.weights, d_logits);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        if (bt.hidden_pre[i] <= 0.0) d_hidden[i] = 0.0;
    }
    add_to(grad.hidden_b, d_hidden);
    kernels::add_outer(grad.hidden_w, bt.feature, d_hidden);
    return kernels::matvec(head.hidden_w, d_hidden);
}

void attention_backward(const Matrix& query_seq, const Matrix& kv_seq,
                        const CrossAttentionParams& params, const AttentionTrace& trace,
                        std::span<const double> d_feature, CrossAttentionParams& grad) {
    // Mean pooling spreads the gradient evenly over query rows.
    Matrix d_out(trace.output.rows(), trace.output.cols());
    const double inv = 1.0 / static_cast<double>(trace.output.rows());
    for (std::size_t r = 0; r < d_out.rows(); ++r) {
        auto row = d_out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = d_feature[c] * inv;
    }
    cross_attend_backward(query_seq, kv_seq, params, trace, d_out, grad);
}

}  // namespace

std::string_view variant_tag(Variant v) {
    switch (v) {
    case Variant::full: return "full";
    case Variant::no_cross: return "-cross";
    case Variant::no_meta: return "-meta";
    case Variant::no_image: return "-img";
    case Variant::no_text: return "-txt";
    }
    return "?";
}

Variant parse_variant(std::string_view tag) {
    if (tag == "full" || tag == "cma") return Variant::full;
    if (tag == "-cross" || tag == "no-cross") return Variant::no_cross;
    if (tag == "-meta" || tag == "no-meta") return Variant::no_meta;
    if (tag == "-img" || tag == "no-img") return Variant::no_image;
    if (tag == "-txt" || tag == "no-txt") return Variant::no_text;
    throw DataError("unknown ablation variant '" + std::string(tag) + "'");
}

const std::vector<Branch>& active_branches(Variant v) {
    switch (v) {
    case Variant::full: return kFullBranches;
    case Variant::no_cross: return kNoCrossBranches;
    case Variant::no_meta: return kConcatOnly;
    case Variant::no_image: return kTextOnly;
    case Variant::no_text: return kImageOnly;
    }
    return kFullBranches;
}

bool uses_attention(Variant v) { return v == Variant::full; }
bool uses_meta(Variant v) { return v != Variant::no_meta; }

std::string_view meta_input_name(MetaInput m) {
    return m == MetaInput::probabilities ? "probabilities" : "features";
}

MetaInput parse_meta_input(std::string_view s) {
    if (s == "probabilities") return MetaInput::probabilities;
    if (s == "features") return MetaInput::features;
    throw DataError("unknown meta input '" + std::string(s) + "'");
}

CmaModel make_zero_model(std::size_t d, Variant variant, MetaInput meta_input,
                         std::size_t hidden_units) {
    if (d == 0) throw DimensionError("model dimension must be positive");
    CmaModel m;
    m.variant = variant;
    m.dim = d;
    m.meta_input = meta_input;
    m.hidden_units = hidden_units;
    if (uses_attention(variant)) {
        m.attn_mt = CrossAttentionParams{Matrix(d, d), Matrix(d, d), Matrix(d, d),
                                         AttentionDirection::image_to_text};
        m.attn_tm = CrossAttentionParams{Matrix(d, d), Matrix(d, d), Matrix(d, d),
                                         AttentionDirection::text_to_image};
    }
    std::size_t meta_width = 0;
    for (Branch b : active_branches(variant)) {
        const std::size_t in = feature_width(b, d);
        BranchHead h;
        if (hidden_units > 0) {
            h.hidden_w = Matrix(in, hidden_units);
            h.hidden_b = Vector(hidden_units, 0.0);
            h.weights = Matrix(hidden_units, 2);
        } else {
            h.weights = Matrix(in, 2);
        }
        h.bias = Vector(2, 0.0);
        m.branch(b) = std::move(h);
        meta_width += meta_input == MetaInput::probabilities ? 2 : in;
    }
    if (uses_meta(variant)) {
        m.meta = MetaHead{Matrix(meta_width, 2), Vector(2, 0.0), active_branches(variant).size()};
    }
    return m;
}

CmaModel zeros_like(const CmaModel& model) {
    CmaModel z = model;
    for_each_param(z, [](const std::string&, std::span<double> v) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    return z;
}

void for_each_param(CmaModel& model,
                    const std::function<void(const std::string&, std::span<double>)>& fn) {
    visit_params(model, fn);
}

void for_each_param(const CmaModel& model,
                    const std::function<void(const std::string&, std::span<const double>)>& fn) {
    visit_params(model, [&](const std::string& name, auto values) {
        fn(name, std::span<const double>(values.data(), values.size()));
    });
}

std::vector<ParamShape> param_shapes(const CmaModel& model) {
    std::vector<ParamShape> out;
    auto mat = [&](const std::string& name, const Matrix& m) {
        out.push_back({name, m.rows(), m.cols()});
    };
    auto vec = [&](const std::string& name, const Vector& v) { out.push_back({name, 1, v.size()}); };
    for (auto [opt, prefix] : {std::pair{&model.attn_mt, "attn_mt"}, std::pair{&model.attn_tm, "attn_tm"}}) {
        if (!*opt) continue;
        mat(std::string(prefix) + ".w_q", (*opt)->w_q);
        mat(std::string(prefix) + ".w_k", (*opt)->w_k);
        mat(std::string(prefix) + ".w_v", (*opt)->w_v);
    }
    for (Branch b : kAllBranches) {
        const auto& head = model.branch(b);
        if (!head) continue;
        const std::string prefix = "branch." + std::string(branch_name(b));
        if (head->has_hidden()) {
            mat(prefix + ".hidden_w", head->hidden_w);
            vec(prefix + ".hidden_b", head->hidden_b);
        }
        mat(prefix + ".weights", head->weights);
        vec(prefix + ".bias", head->bias);
    }
    if (model.meta) {
        mat("meta.weights", model.meta->weights);
        vec("meta.bias", model.meta->bias);
    }
    return out;
}

std::size_t parameter_count(const CmaModel& model) {
    std::size_t n = 0;
    for_each_param(model, [&](const std::string&, std::span<const double> v) { n += v.size(); });
    return n;
}

Vector flatten(const CmaModel& model) {
    Vector out;
    out.reserve(parameter_count(model));
    for_each_param(model, [&](const std::string&, std::span<const double> v) {
        out.insert(out.end(), v.begin(), v.end());
    });
    return out;
}

void unflatten(CmaModel& model, std::span<const double> values) {
    if (values.size() != parameter_count(model)) {
        throw DimensionError("unflatten: " + std::to_string(values.size()) + " values for " +
                             std::to_string(parameter_count(model)) + " parameters");
    }
    std::size_t pos = 0;
    for_each_param(model, [&](const std::string&, std::span<double> v) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(pos), v.size(), v.begin());
        pos += v.size();
    });
}

ProbVector branch_forward(std::span<const double> feature, const BranchHead& head) {
    return head_forward(feature, head).probs;
}

ProbVector meta_forward(std::span<const ProbVector> branch_probs, const MetaHead& head) {
    if (branch_probs.size() != head.z) {
        throw DimensionError("meta_forward: " + std::to_string(branch_probs.size()) +
                             " branch outputs for z = " + std::to_string(head.z));
    }
    Vector input;
    input.reserve(2 * head.z);
    for (const auto& p : branch_probs) input.insert(input.end(), p.begin(), p.end());
    return softmax(affine(input, head.weights, head.bias));
}

Prediction cma_forward(const FeatureRecord& record, const CmaModel& model) {
    ForwardTrace t = forward_trace(record, model);
    Prediction p;
    p.y_hat = std::move(t.y_hat);
    for (auto& bt : t.branches) {
        p.branches.push_back(bt.branch);
        p.branch_probs.push_back(std::move(bt.probs));
    }
    return p;
}

double cross_entropy(Label y, const ProbVector& y_hat) {
    if (y > 1) throw DataError("cross_entropy: label must be 0 or 1");
    if (y_hat.size() != 2) throw DimensionError("cross_entropy: expects two classes");
    const double p1 = std::clamp(y_hat[1], kProbClamp, 1.0 - kProbClamp);
    return -(y * std::log(p1) + (1 - y) * std::log(1.0 - p1));
}

double cma_loss(const FeatureRecord& record, Label label, const CmaModel& model,
                LossOptions options) {
    const ForwardTrace t = forward_trace(record, model);
    double loss = cross_entropy(label, t.y_hat);
    if (options.aux_branch_loss && model.meta) {
        for (const auto& bt : t.branches) loss += cross_entropy(label, bt.probs);
    }
    return loss;
}

double cma_backward(const FeatureRecord& record, Label label, const CmaModel& model,
                    CmaModel& grad, LossOptions options) {
    const ForwardTrace t = forward_trace(record, model);
    double loss = cross_entropy(label, t.y_hat);
    const Vector d_y = softmax_backward(t.y_hat, ce_grad(label, t.y_hat));

    const std::size_t nb = t.branches.size();
    std::vector<Vector> d_probs(nb, Vector(2, 0.0));
    std::vector<Vector> d_features(nb);
    for (std::size_t i = 0; i < nb; ++i) d_features[i].assign(t.branches[i].feature.size(), 0.0);

    if (model.meta) {
        add_to(grad.meta->bias, d_y);
        kernels::add_outer(grad.meta->weights, t.meta_input, d_y);
        const Vector d_input = kernels::matvec(model.meta->weights, d_y);
        std::size_t pos = 0;
        for (std::size_t i = 0; i < nb; ++i) {
            auto& target = model.meta_input == MetaInput::probabilities ? d_probs[i] : d_features[i];
            for (double& x : target) x += d_input[pos++];
        }
        if (options.aux_branch_loss) {
            for (std::size_t i = 0; i < nb; ++i) {
                loss += cross_entropy(label, t.branches[i].probs);
                add_to(d_probs[i], ce_grad(label, t.branches[i].probs));
            }
        }
    } else {
        d_probs[0] = ce_grad(label, t.y_hat);
    }

    for (std::size_t i = 0; i < nb; ++i) {
        const BranchTrace& bt = t.branches[i];
        const Vector d_logits = softmax_backward(bt.probs, d_probs[i]);
        const Vector d_feat =
            head_backward(bt, *model.branch(bt.branch), *grad.branch(bt.branch), d_logits);
        add_to(d_features[i], d_feat);
    }

    for (std::size_t i = 0; i < nb; ++i) {
        const BranchTrace& bt = t.branches[i];
        if (bt.branch == Branch::image_to_text) {
            attention_backward(record.image_tokens, record.text_tokens, *model.attn_mt, *t.mt,
                               d_features[i], *grad.attn_mt);
        } else if (bt.branch == Branch::text_to_image) {
            attention_backward(record.text_tokens, record.image_tokens, *model.attn_tm, *t.tm,
                               d_features[i], *grad.attn_tm);
        }
    }
    return loss;
}

}  // namespace cma
