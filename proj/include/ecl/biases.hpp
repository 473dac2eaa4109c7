#pragma once

#include <cmath>
#include <vector>

#include "ecl/common.hpp"
#include "ecl/tensor.hpp"

namespace ecl {

// Shaping losses and diagnostics for emergent communication. All entropies
// are Shannon entropies in nats; logs of probabilities clamp at 1e-10.
//
// Gradient-carrying versions build on the tape; diagnostic versions compute
// in double from plain probability vectors.

// ---- diagnostics (no gradients) ----

inline double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

// -sum p log p. Errors on negative entries.
template <typename V>
double entropy(const V& p) {
    double h = 0.0;
    for (auto x : p) {
        const double px = static_cast<double>(x);
        if (px < 0.0) fail("entropy: negative probability ", px);
        if (px > 0.0) h -= px * clamped_log(px);
    }
    return h;
}

// Batch estimator of I(m; x): H(batch-average policy) - mean H(policy).
// policies: flattened row-major [count x alphabet].
inline double message_mutual_information(const std::vector<double>& policies, int alphabet) {
    if (alphabet <= 0 || policies.empty() || policies.size() % static_cast<size_t>(alphabet) != 0)
        fail("message_mutual_information: empty or ragged batch");
    const size_t count = policies.size() / static_cast<size_t>(alphabet);
    std::vector<double> avg(static_cast<size_t>(alphabet), 0.0);
    double mean_h = 0.0;
    for (size_t i = 0; i < count; ++i) {
        const double* row = policies.data() + i * static_cast<size_t>(alphabet);
        mean_h += entropy(std::vector<double>(row, row + alphabet));
        for (int k = 0; k < alphabet; ++k) avg[static_cast<size_t>(k)] += row[k];
    }
    for (auto& a : avg) a /= static_cast<double>(count);
    mean_h /= static_cast<double>(count);
    return entropy(avg) - mean_h;
}

// mean_t KL(pi(.|x_t) || pibar(.|x'_t)); >= 0 up to the log clamp.
inline double estimate_cic(const std::vector<double>& actual, const std::vector<double>& counterfactual,
                           int alphabet) {
    if (actual.size() != counterfactual.size())
        fail("estimate_cic: length mismatch ", actual.size(), " vs ", counterfactual.size());
    if (actual.empty() || actual.size() % static_cast<size_t>(alphabet) != 0)
        fail("estimate_cic: empty or ragged batch");
    const size_t count = actual.size() / static_cast<size_t>(alphabet);
    double total = 0.0;
    for (size_t i = 0; i < count; ++i)
        for (int k = 0; k < alphabet; ++k) {
            const double p = actual[i * static_cast<size_t>(alphabet) + static_cast<size_t>(k)];
            const double q = counterfactual[i * static_cast<size_t>(alphabet) + static_cast<size_t>(k)];
            if (p > 0.0) total += p * (clamped_log(p) - clamped_log(q));
        }
    return total / static_cast<double>(count);
}

inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    return estimate_cic(p, q, static_cast<int>(p.size()));
}

// Intrinsic reward for the speaker in the social-influence baseline: the
// listener's per-step CIC scaled by a weight. Deliberately centralized.
inline std::vector<double> social_influence_reward(const std::vector<double>& cic_per_step,
                                                   double weight) {
    std::vector<double> out(cic_per_step.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = weight * cic_per_step[i];
    return out;
}

// ---- gradient-carrying pieces ----

// Row entropies of a [B,K] probability matrix -> [B].
template <typename T>
TensorT<T> entropy_rows(Tape<T>& tape, TensorT<T> probs) {
    auto plogp = tape.multiply(probs, tape.log(probs));
    return tape.scale(tape.sum(plogp, 1), -1.0);
}

// Entropy of a single [K] distribution -> scalar [1].
template <typename T>
TensorT<T> entropy_vec(Tape<T>& tape, TensorT<T> probs) {
    auto plogp = tape.multiply(probs, tape.log(probs));
    return tape.scale(tape.sum(plogp, -1), -1.0);
}

// Positive-signalling loss over a batch of per-step message policies [N,K]:
//   L_ps = -lambda_marginal * H(mean policy) +
//           lambda_conditional * mean((H(pi(.|x_t)) - H_target)^2)
// The batch-average policy is built inside the graph, so its entropy term
// sends gradients into every element of the batch.
template <typename T>
TensorT<T> positive_signalling_loss(Tape<T>& tape, TensorT<T> message_probs, double h_target,
                                    double lambda_marginal, double lambda_conditional) {
    if (message_probs.shape().size() != 2)
        fail("positive_signalling_loss: want [N,K] policies, got ", shape_str(message_probs.shape()));
    const int k = message_probs.shape()[1];
    if (h_target < 0.0 || h_target > std::log(static_cast<double>(k)) + 1e-9)
        fail("positive_signalling_loss: H_target ", h_target, " outside [0, ln ", k, "]");
    auto avg_policy = tape.mean(message_probs, 0);                       // [K]
    auto marginal_H = entropy_vec(tape, avg_policy);                     // [1]
    auto cond_H = entropy_rows(tape, message_probs);                     // [N]
    auto target = tape.constant_full({message_probs.shape()[0]}, static_cast<T>(h_target));
    auto sq = tape.square(tape.subtract(cond_H, target));
    auto cond_term = tape.mean(sq, -1);                                  // [1]
    return tape.add(tape.scale(marginal_H, -lambda_marginal), tape.scale(cond_term, lambda_conditional));
}

// L_ce = -sum_t sum_a stop_grad(pi(a|x_t)) * log(pibar(a|x'_t)).
// Gradients flow only into the counterfactual pass.
template <typename T>
TensorT<T> cross_entropy_fit_loss(Tape<T>& tape, const std::vector<TensorT<T>>& actual,
                                  const std::vector<TensorT<T>>& counterfactual) {
    if (actual.size() != counterfactual.size() || actual.empty())
        fail("cross_entropy_fit_loss: mismatched or empty policy lists (", actual.size(), " vs ",
             counterfactual.size(), ")");
    TensorT<T> total;
    for (size_t t = 0; t < actual.size(); ++t) {
        auto term = tape.sum(tape.multiply(tape.stop_gradient(actual[t]), tape.log(counterfactual[t])), -1);
        total = t == 0 ? term : tape.add(total, term);
    }
    return tape.scale(total, -1.0);
}

// L_pl = -sum_t sum_a |pi(a|x_t) - stop_grad(pibar(a|x'_t))|.
// Gradients flow only into the actual policy.
template <typename T>
TensorT<T> positive_listening_loss(Tape<T>& tape, const std::vector<TensorT<T>>& actual,
                                   const std::vector<TensorT<T>>& counterfactual) {
    if (actual.size() != counterfactual.size() || actual.empty())
        fail("positive_listening_loss: mismatched or empty policy lists (", actual.size(), " vs ",
             counterfactual.size(), ")");
    TensorT<T> total;
    for (size_t t = 0; t < actual.size(); ++t) {
        auto diff = tape.subtract(actual[t], tape.stop_gradient(counterfactual[t]));
        auto term = tape.sum(tape.abs(diff), -1);
        total = t == 0 ? term : tape.add(total, term);
    }
    return tape.scale(total, -1.0);
}

// Same loss over a list of per-step [B,K] policy tensors (the BPTT layout).
// The batch-average policy is the average of per-step row means, which equals
// the average over all T*B rows.
template <typename T>
TensorT<T> positive_signalling_loss_steps(Tape<T>& tape, const std::vector<TensorT<T>>& step_probs,
                                          double h_target, double lambda_marginal,
                                          double lambda_conditional) {
    if (step_probs.empty()) fail("positive_signalling_loss: empty batch");
    const int k = step_probs[0].shape()[1];
    if (h_target < 0.0 || h_target > std::log(static_cast<double>(k)) + 1e-9)
        fail("positive_signalling_loss: H_target ", h_target, " outside [0, ln ", k, "]");
    const double inv_t = 1.0 / static_cast<double>(step_probs.size());
    TensorT<T> avg_policy;  // [K]
    TensorT<T> sq_sum;      // [1]
    int rows = 0;
    for (size_t t = 0; t < step_probs.size(); ++t) {
        auto probs = step_probs[t];
        if (probs.shape().size() != 2 || probs.shape()[1] != k)
            fail("positive_signalling_loss: ragged step shapes");
        rows += probs.shape()[0];
        auto step_mean = tape.scale(tape.mean(probs, 0), inv_t);
        avg_policy = t == 0 ? step_mean : tape.add(avg_policy, step_mean);
        auto cond_H = entropy_rows(tape, probs);
        auto target = tape.constant_full({probs.shape()[0]}, static_cast<T>(h_target));
        auto sq = tape.sum(tape.square(tape.subtract(cond_H, target)), -1);
        sq_sum = t == 0 ? sq : tape.add(sq_sum, sq);
    }
    auto marginal_H = entropy_vec(tape, avg_policy);
    auto cond_term = tape.scale(sq_sum, 1.0 / rows);
    return tape.add(tape.scale(marginal_H, -lambda_marginal), tape.scale(cond_term, lambda_conditional));
}

enum class CounterfactualMode {
    all_messages_zeroed,   // multi-step CIC: h' carried under zeroed inputs
    final_message_zeroed,  // single-step CIC: true hidden state, message zeroed at t only
};

// Replays a recurrent policy over a trajectory with message inputs zeroed.
// step_fn(t, h, c, zero_message) must run the network for step t using the
// stored observations, with the incoming message replaced by a zero vector
// when zero_message is true, and return the action policy plus the next
// state. actual_states supplies the true per-step (h_{t-1}, c_{t-1}) pairs
// for the final-message mode.
template <typename T, typename StepFn>
std::vector<TensorT<T>> counterfactual_rollout(
    int steps, CounterfactualMode mode, TensorT<T> h0, TensorT<T> c0,
    const std::vector<std::pair<TensorT<T>, TensorT<T>>>& actual_states, StepFn&& step_fn) {
    if (steps <= 0) fail("counterfactual_rollout: no steps");
    if (mode == CounterfactualMode::final_message_zeroed &&
        static_cast<int>(actual_states.size()) != steps)
        fail("counterfactual_rollout: need ", steps, " stored states, got ", actual_states.size());
    std::vector<TensorT<T>> policies;
    policies.reserve(static_cast<size_t>(steps));
    TensorT<T> h = h0, c = c0;
    for (int t = 0; t < steps; ++t) {
        if (mode == CounterfactualMode::all_messages_zeroed) {
            auto [probs, hn, cn] = step_fn(t, h, c, true);
            policies.push_back(probs);
            h = hn;
            c = cn;
        } else {
            auto [probs, hn, cn] = step_fn(t, actual_states[static_cast<size_t>(t)].first,
                                           actual_states[static_cast<size_t>(t)].second, true);
            (void)hn;
            (void)cn;
            policies.push_back(probs);
        }
    }
    return policies;
}

// Loss/diagnostic bundle logged per update.
struct BiasTerms {
    double l_ps = 0.0;
    double l_pl = 0.0;
    double l_ce = 0.0;
    double marginal_entropy = 0.0;
    double mean_conditional_entropy = 0.0;
    double cic = 0.0;
    double mutual_information = 0.0;
};

}  // namespace ecl
