#pragma once

#include <cstdint>
#include <vector>

#include "factlab/corpus.hpp"
#include "factlab/model.hpp"
#include "factlab/vocab.hpp"

namespace factlab {

struct TrainConfig {
    int batch_size = 8;
    int seq_len = 48;
    int max_steps = 2000;
    int min_steps = 0;
    double lr = 1e-3;
    int warmup_steps = 20;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int log_interval = 50;
    // Early stop: every probe_interval steps, measure closed-book recall on
    // the probe items restricted to probe_bin; stop once >= probe_target.
    int probe_interval = 0;
    double probe_target = 0.0;
    int probe_bin = -1;
    uint64_t seed = 0;
};

struct AdamState {
    std::vector<double> m, v;
    long long t = 0;

    static AdamState init(const Checkpoint& ckpt) {
        return {std::vector<double>(ckpt.params.size(), 0.0),
                std::vector<double>(ckpt.params.size(), 0.0), 0};
    }
};

// Gradient buffer matching the checkpoint's flat layout.
using GradBuffer = std::vector<double>;

// Next-token cross-entropy of the model on packed sequences, mean over all
// B*T positions. tokens is [B][T+1]: inputs are positions 0..T-1, targets
// 1..T.
double compute_loss(const Checkpoint& ckpt, const std::vector<int>& tokens, int batch,
                    int seq_len);

// Loss plus parameter gradients (accumulated into grads, which is zeroed).
double compute_grads(const Checkpoint& ckpt, const std::vector<int>& tokens, int batch,
                     int seq_len, GradBuffer& grads);

// One gradient-clipped Adam update. Throws RuntimeFailure on non-finite loss.
double train_step(Checkpoint& ckpt, AdamState& adam, const std::vector<int>& tokens, int batch,
                  int seq_len, const TrainConfig& hyper);

// Closed-book probe item: a stem like "the capital of X is" with the expected
// next token and the frequency bin of its subject.
struct ProbeItem {
    std::vector<int> stem;
    int target = -1;
    int bin = -1;
};

// Fraction of probes whose greedy next-token prediction equals the target,
// optionally restricted to one bin.
double closed_book_recall(const Checkpoint& ckpt, const std::vector<ProbeItem>& probes,
                          int only_bin = -1);

struct LossPoint {
    int step = 0;
    double loss = 0.0;
    double probe_recall = -1.0; // -1 when not probed at this step
};

struct TrainResult {
    Checkpoint ckpt;
    std::vector<LossPoint> log;
    int steps_run = 0;
    bool diverged = false;
    bool early_stopped = false;
    double final_loss = 0.0;
};

// Full training loop over a document set: documents are shuffled per epoch
// (deterministically from the seed), packed into fixed-length sequences with
// end-of-text separators, and consumed in order. Divergence aborts with the
// last known-good checkpoint.
TrainResult train(const DocumentSet& corpus, const Vocabulary& vocab, const ModelConfig& config,
                  const TrainConfig& tc, const std::vector<ProbeItem>& probes = {});

} // namespace factlab
