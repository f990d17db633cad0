#include "cma/fusion.hpp"

#include <cmath>

#include "cma/errors.hpp"
#include "cma/kernels.hpp"

namespace cma {
namespace {

void check_params(const CrossAttentionParams& p, std::size_t d) {
    for (const Matrix* m : {&p.w_q, &p.w_k, &p.w_v}) {
        if (m->rows() != d || m->cols() != d) {
            throw DimensionError("cross_attend: projection " + m->shape() + " for width " +
                                 std::to_string(d));
        }
    }
}

void scale_in_place(Matrix& m, double s) {
    for (double& x : m.values()) x *= s;
}

void add_in_place(Matrix& acc, const Matrix& m) {
    auto a = acc.values();
    auto b = m.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

std::string_view branch_name(Branch b) {
    switch (b) {
    case Branch::text: return "t";
    case Branch::image: return "m";
    case Branch::concat: return "c";
    case Branch::image_to_text: return "mt";
    case Branch::text_to_image: return "tm";
    }
    return "?";
}

AttentionTrace cross_attend_trace(const Matrix& query_seq, const Matrix& key_value_seq,
                                  const CrossAttentionParams& params) {
    if (query_seq.rows() == 0 || key_value_seq.rows() == 0) {
        throw DimensionError("cross_attend: empty sequence");
    }
    const std::size_t d = params.dim();
    if (query_seq.cols() != d || key_value_seq.cols() != d) {
        throw DimensionError("cross_attend: query " + query_seq.shape() + ", key/value " +
                             key_value_seq.shape() + " for model width " + std::to_string(d));
    }
    check_params(params, d);

    AttentionTrace t;
    t.q = kernels::matmul(query_seq, params.w_q);
    t.k = kernels::matmul(key_value_seq, params.w_k);
    t.v = kernels::matmul(key_value_seq, params.w_v);
    t.weights = kernels::matmul_nt(t.q, t.k);
    scale_in_place(t.weights, 1.0 / std::sqrt(static_cast<double>(d)));
    softmax_rows(t.weights);
    t.output = kernels::matmul(t.weights, t.v);
    if (!all_finite(t.output.values())) throw NumericError("cross_attend: non-finite output");
    return t;
}

Matrix cross_attend(const Matrix& query_seq, const Matrix& key_value_seq,
                    const CrossAttentionParams& params) {
    return cross_attend_trace(query_seq, key_value_seq, params).output;
}

void cross_attend_backward(const Matrix& query_seq, const Matrix& key_value_seq,
                           const CrossAttentionParams& params, const AttentionTrace& trace,
                           const Matrix& d_output, CrossAttentionParams& grad) {
    const std::size_t d = params.dim();
    check_params(grad, d);
    if (d_output.rows() != trace.output.rows() || d_output.cols() != d) {
        throw DimensionError("cross_attend_backward: upstream " + d_output.shape() +
                             " vs output " + trace.output.shape());
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));

    const Matrix d_weights = kernels::matmul_nt(d_output, trace.v);
    const Matrix d_v = kernels::matmul_tn(trace.weights, d_output);

    // Row-wise softmax Jacobian: dS = A ⊙ (dA - rowsum(A ⊙ dA)).
    Matrix d_scores(trace.weights.rows(), trace.weights.cols());
    for (std::size_t r = 0; r < d_scores.rows(); ++r) {
        const auto a = trace.weights.row(r);
        const auto da = d_weights.row(r);
        const double inner = dot(a, da);
        auto ds = d_scores.row(r);
        for (std::size_t c = 0; c < ds.size(); ++c) ds[c] = a[c] * (da[c] - inner);
    }

    Matrix d_q = kernels::matmul(d_scores, trace.k);
    scale_in_place(d_q, scale);
    Matrix d_k = kernels::matmul_tn(d_scores, trace.q);
    scale_in_place(d_k, scale);

    add_in_place(grad.w_q, kernels::matmul_tn(query_seq, d_q));
    add_in_place(grad.w_k, kernels::matmul_tn(key_value_seq, d_k));
    add_in_place(grad.w_v, kernels::matmul_tn(key_value_seq, d_v));
}

Vector concat_normalized(std::span<const double> f_t, std::span<const double> f_m) {
    if (f_t.size() != f_m.size()) {
        throw DimensionError("concat_normalized: widths " + std::to_string(f_t.size()) + " and " +
                             std::to_string(f_m.size()));
    }
    return l2_normalize(concat(f_t, f_m));
}

const Vector& FeatureBundle::get(Branch b) const {
    switch (b) {
    case Branch::text: return f_t;
    case Branch::image: return f_m;
    case Branch::concat: return f_c;
    case Branch::image_to_text: return f_mt;
    case Branch::text_to_image: return f_tm;
    }
    throw DataError("FeatureBundle: unknown branch");
}

Vector& FeatureBundle::get(Branch b) {
    return const_cast<Vector&>(static_cast<const FeatureBundle&>(*this).get(b));
}

FeatureBundle build_bundle(const FeatureRecord& record, const CrossAttentionParams& params_mt,
                           const CrossAttentionParams& params_tm) {
    FeatureBundle b;
    b.f_t = mean_rows(record.text_tokens);
    b.f_m = mean_rows(record.image_tokens);
    b.f_c = concat_normalized(b.f_t, b.f_m);
    b.f_mt = mean_rows(cross_attend(record.image_tokens, record.text_tokens, params_mt));
    b.f_tm = mean_rows(cross_attend(record.text_tokens, record.image_tokens, params_tm));
    return b;
}

}  // namespace cma
