#pragma once

#include <string>
#include <vector>

namespace mmf {

struct CheckResult {
    std::string name;
    double measured = 0.0;   // worst observed value
    double tolerance = 0.0;  // pass iff measured < tolerance
    bool pass = false;
};

// Differentiation checks: central-difference grad_check (f64, eps 1e-5) on
// every layer type, composite attention blocks, and the full co-attention
// model with BCE on a 16x16 image and 8-token text.
std::vector<CheckResult> verify_gradients();

// Attention weight rows sum to 1 within 1e-6 over seeded forwards of every
// attention-bearing aggregator, plus a softmax stress check that includes
// magnitudes past the f32 exp overflow threshold.
std::vector<CheckResult> verify_attention_normalization(std::size_t forwards = 100);

// Independently permuting post-tokenizer visual and text tokens moves the
// final logit by less than 1e-5 (f32) across seeded cases.
std::vector<CheckResult> verify_permutation_invariance(std::size_t cases = 50);

// Pair-counting vs trapezoidal AUC on fuzzed tied instances, 1e-9.
std::vector<CheckResult> verify_auc_oracles(std::size_t instances = 1000);

// preprocess(preprocess(x)) == preprocess(x) on synthetic images.
std::vector<CheckResult> verify_preprocess_idempotence(std::size_t samples = 50);

std::vector<CheckResult> run_all_verifications();

}  // namespace mmf
