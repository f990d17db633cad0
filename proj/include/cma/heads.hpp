#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cma/fusion.hpp"
#include "cma/numerics.hpp"
#include "cma/record.hpp"

namespace cma {

// Ablation variants.
//   full    branches {t, m, c, mt, tm} + meta head (z = 5)
//   -cross  branches {t, m, c} + meta head (z = 3)
//   -meta   a single head over f_c, no ensemble
//   -img    text branch only (z = 1)
//   -txt    image branch only (z = 1)
enum class Variant { full, no_cross, no_meta, no_image, no_text };

std::string_view variant_tag(Variant v);
Variant parse_variant(std::string_view tag);  // DataError on unknown tags

const std::vector<Branch>& active_branches(Variant v);
bool uses_attention(Variant v);
bool uses_meta(Variant v);

// What the meta head consumes. `probabilities` concatenates the branch
// softmax outputs (default). `features` feeds the concatenated raw branch
// features instead; in that mode branch heads only learn through the
// auxiliary loss.
enum class MetaInput { probabilities, features };

std::string_view meta_input_name(MetaInput m);
MetaInput parse_meta_input(std::string_view s);

// Linear probe, or one ReLU hidden layer followed by a linear layer when
// hidden_w is non-empty.
struct BranchHead {
    Matrix hidden_w;  // in_dim x h, empty for the linear head
    Vector hidden_b;
    Matrix weights;   // in_dim x 2, or h x 2
    Vector bias;      // 2

    std::size_t in_dim() const { return has_hidden() ? hidden_w.rows() : weights.rows(); }
    bool has_hidden() const { return !hidden_w.empty(); }
    bool operator==(const BranchHead&) const = default;
};

struct MetaHead {
    Matrix weights;  // (2z) x 2 over probabilities, or (sum of widths) x 2 over features
    Vector bias;     // 2
    std::size_t z = 0;

    bool operator==(const MetaHead&) const = default;
};

struct CmaModel {
    Variant variant = Variant::full;
    std::size_t dim = 0;
    MetaInput meta_input = MetaInput::probabilities;
    std::size_t hidden_units = 0;

    std::optional<CrossAttentionParams> attn_mt;
    std::optional<CrossAttentionParams> attn_tm;
    std::array<std::optional<BranchHead>, 5> branches;
    std::optional<MetaHead> meta;

    std::optional<BranchHead>& branch(Branch b) { return branches[static_cast<int>(b)]; }
    const std::optional<BranchHead>& branch(Branch b) const {
        return branches[static_cast<int>(b)];
    }

    bool operator==(const CmaModel&) const = default;
};

struct Prediction {
    ProbVector y_hat;
    std::vector<ProbVector> branch_probs;  // one per active branch, in branch order
    std::vector<Branch> branches;

    std::size_t predicted_label() const { return y_hat.argmax(); }
};

// Allocates every parameter of `variant` with zeros.
CmaModel make_zero_model(std::size_t d, Variant variant, MetaInput meta_input = MetaInput::probabilities,
                         std::size_t hidden_units = 0);

// Same shapes as `model`, all zeros. Used as a gradient accumulator.
CmaModel zeros_like(const CmaModel& model);

// Visits parameter blocks in a fixed order with stable names such as
// "attn_mt.w_q", "branch.c.weights", "meta.bias".
void for_each_param(CmaModel& model, const std::function<void(const std::string&, std::span<double>)>& fn);
void for_each_param(const CmaModel& model,
                    const std::function<void(const std::string&, std::span<const double>)>& fn);

struct ParamShape {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

// Same order and names as for_each_param; biases are 1 x n.
std::vector<ParamShape> param_shapes(const CmaModel& model);

std::size_t parameter_count(const CmaModel& model);
Vector flatten(const CmaModel& model);
void unflatten(CmaModel& model, std::span<const double> values);

ProbVector branch_forward(std::span<const double> feature, const BranchHead& head);

// `branch_probs` must be in the fixed (t, m, c, mt, tm) order restricted to
// the active set; its length must equal head.z.
ProbVector meta_forward(std::span<const ProbVector> branch_probs, const MetaHead& head);

Prediction cma_forward(const FeatureRecord& record, const CmaModel& model);

inline constexpr double kProbClamp = 1e-12;

// Binary cross-entropy on the class-1 probability, clamped to
// [1e-12, 1 - 1e-12] before the logarithm.
double cross_entropy(Label y, const ProbVector& y_hat);

struct LossOptions {
    // Adds the cross-entropy of every branch head (equal weight, summed) to
    // the meta loss.
    bool aux_branch_loss = false;
};

double cma_loss(const FeatureRecord& record, Label label, const CmaModel& model,
                LossOptions options = {});

// Returns the loss and adds its parameter gradients into `grad`, which must
// have the shapes of `model` (see zeros_like).
double cma_backward(const FeatureRecord& record, Label label, const CmaModel& model,
                    CmaModel& grad, LossOptions options = {});

}  // namespace cma
