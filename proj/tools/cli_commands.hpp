#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tet/model.hpp"
#include "tet/synth.hpp"
#include "tet/training.hpp"

// Subcommand implementations shared by the 3et binary and the integration
// tests. All functions throw DataError/NumericError on failure; the binary
// maps those to exit codes.

namespace tet::cli {

struct GenOptions {
    std::string out;
    bool force = false;
    std::uint64_t seed = 1;
    double duration_s = 20.0;
    std::uint64_t delta_t_us = 4400;
    SyntheticSceneConfig scene; // width/height/seed are overridden below
};

struct ModelFlags {
    std::string cell = "cb"; // vanilla | cb
    std::string delta_rule = "magnitude";
    std::vector<int> channels = {8, 16, 32, 64};
    int fc_hidden = 128;
    double theta = 0.0;
    int seq_len = 40;
};

struct TrainOptions {
    std::string data;
    std::string out;
    ModelFlags model;
    TrainConfig train;
};

struct EvalOptions {
    std::string data;
    std::string weights;
    std::string out;
    ModelFlags model;
    std::string split = "val"; // train | val | all
    double split_ratio = 0.8;
};

struct SweepThetaOptions {
    std::string data;
    std::string weights;
    std::string baseline_weights; // optional vanilla run for the reduction column
    std::string out;
    ModelFlags model;
    std::vector<double> thetas = {0.0, 0.1, 0.2, 0.5};
    std::string split = "val";
    double split_ratio = 0.8;
};

struct SweepSeqLenOptions {
    std::string data;
    std::string out;
    ModelFlags model;
    TrainConfig train;
    std::vector<int> seq_lens = {2, 40};
};

struct CountOpsOptions {
    std::string data;    // optional; enables effective counts
    std::string weights; // required with data
    std::string out;     // optional CSV destination
    ModelFlags model;
    int width = 80, height = 60;
    int flops_per_mac = 1;
    std::string split = "val";
    double split_ratio = 0.8;
};

void cmd_gen(const GenOptions& opt);
// returns false when the NaN guard aborted training (exit code 4)
bool cmd_train(const TrainOptions& opt);
void cmd_eval(const EvalOptions& opt);
void cmd_sweep_theta(const SweepThetaOptions& opt);
void cmd_sweep_seqlen(const SweepSeqLenOptions& opt);
void cmd_count_ops(const CountOpsOptions& opt);

// worker-lane cap from THREETET_THREADS; the reference build runs one lane
int effective_threads();

} // namespace tet::cli
