#pragma once

#include <array>
#include <string_view>

#include "cma/numerics.hpp"
#include "cma/record.hpp"

namespace cma {

// The five feature pathways, in the fixed order the meta head consumes them.
enum class Branch { text = 0, image = 1, concat = 2, image_to_text = 3, text_to_image = 4 };

inline constexpr std::array<Branch, 5> kAllBranches = {
    Branch::text, Branch::image, Branch::concat, Branch::image_to_text, Branch::text_to_image};

std::string_view branch_name(Branch b);  // "t", "m", "c", "mt", "tm"

enum class AttentionDirection { image_to_text, text_to_image };

// Query/key/value projections for one attention direction. All three are d x d.
struct CrossAttentionParams {
    Matrix w_q;
    Matrix w_k;
    Matrix w_v;
    AttentionDirection direction = AttentionDirection::image_to_text;

    std::size_t dim() const { return w_q.rows(); }
    bool operator==(const CrossAttentionParams&) const = default;
};

// Intermediate values of one attention pass, kept for the backward pass.
struct AttentionTrace {
    Matrix q;        // L_q x d
    Matrix k;        // L_kv x d
    Matrix v;        // L_kv x d
    Matrix weights;  // L_q x L_kv, rows are probability vectors
    Matrix output;   // L_q x d
};

AttentionTrace cross_attend_trace(const Matrix& query_seq, const Matrix& key_value_seq,
                                  const CrossAttentionParams& params);

// softmax(Q Kᵀ / sqrt(d)) V with Q = query_seq·w_q, K = kv·w_k, V = kv·w_v.
// One output row per query token (not pooled).
Matrix cross_attend(const Matrix& query_seq, const Matrix& key_value_seq,
                    const CrossAttentionParams& params);

// Accumulates parameter gradients of cross_attend into `grad` given the
// upstream gradient with respect to the (unpooled) output.
void cross_attend_backward(const Matrix& query_seq, const Matrix& key_value_seq,
                           const CrossAttentionParams& params, const AttentionTrace& trace,
                           const Matrix& d_output, CrossAttentionParams& grad);

// [f_t ⊕ f_m] normalized once as a whole.
Vector concat_normalized(std::span<const double> f_t, std::span<const double> f_m);

struct FeatureBundle {
    Vector f_t;
    Vector f_m;
    Vector f_c;
    Vector f_mt;
    Vector f_tm;

    const Vector& get(Branch b) const;
    Vector& get(Branch b);
    bool operator==(const FeatureBundle&) const = default;
};

// All five features. f_mt uses image tokens as queries over text tokens,
// f_tm the reverse; multi-token attention outputs are mean-pooled.
FeatureBundle build_bundle(const FeatureRecord& record, const CrossAttentionParams& params_mt,
                           const CrossAttentionParams& params_tm);

}  // namespace cma
