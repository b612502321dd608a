#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbwc/data.hpp"
#include "fbwc/losses.hpp"
#include "fbwc/model.hpp"
#include "fbwc/tensor.hpp"

namespace fbwc {

// Everything one run needs: optimizer schedule, architecture knobs, and the
// ablation switches. Desk-scale defaults (64x64, C=16, batch 4); the
// full-scale protocol (352x352, batch 6) is reachable through config alone.
struct TrainConfig {
    int epochs = 200;
    int batch = 4;
    double base_lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double poly_power = 0.9;
    int n_units = 4;
    int depth = 3;
    int lambda = 4;
    int channels = 16;
    int img_h = 64;
    int img_w = 64;
    std::uint64_t seed = 1;
    int ckpt_every = 0;  // extra checkpoint every K epochs; 0 = final only
    bool am_off = false;   // drop the attention-map loss term
    bool bc_off = false;   // drop the boundary-constraint loss terms
    bool cta_off = false;  // bypass the attention blocks in the model
    bool use_scc = false;  // spatial conv instead of spectral enhancement
    bool use_ca = false;   // per-pixel gating instead of channel affinity
};

void train_config_valid(const TrainConfig& cfg);

// Key = value text, one field per line, fixed order, lossless round trip.
std::string train_config_to_text(const TrainConfig& cfg);
// Strict parser: every line must be `key = value` with a known key.
TrainConfig train_config_from_text(const std::string& text);
// Sets a single field by key name; returns false for an unknown key.
bool train_config_apply(TrainConfig& cfg, const std::string& key, const std::string& value);

ModelConfig to_model_config(const TrainConfig& cfg);

// base_lr * (1 - iter/max_iter)^power; monotone nonincreasing, 0 at the end.
double poly_lr(std::int64_t iter, std::int64_t max_iter, double base_lr, double power);

// One SGD-with-momentum update from the gradients recorded on `tape`:
//   v <- momentum*v + g + weight_decay*p   (decay only where Param::decay)
//   p <- p - lr*v
// Every parameter must be attached to the tape (alignment contract).
void sgd_step(ParamStore& store, const Tape& tape, double lr, double momentum,
              double weight_decay);

// Checkpoint file: magic "FBWC", little-endian u32 version, u32 config-text
// length + bytes (the config echo ends with an `iteration = N` line), then
// repeated blobs of (u32 name length, name, u32 rank=4, 4x u32 dims, f32
// payload): each parameter followed by its ".v" momentum buffer, then the
// persistent buffers (batchnorm running stats). Save -> load -> save is
// byte-identical.
void save_checkpoint(const std::string& path, const TrainConfig& cfg, const ParamStore& store,
                     std::uint64_t iteration);

struct LoadedCheckpoint {
    TrainConfig cfg;
    FbwcModel model;
    ParamStore store;
    std::uint64_t iteration = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

struct EpochLog {
    int epoch = 0;
    std::int64_t iter = 0;  // optimizer steps completed by epoch end
    double lr = 0;          // schedule value at the last step of the epoch
    double l_seg = 0, l_am = 0, l_bc_mean = 0, total = 0;  // epoch means
};

struct TrainResult {
    std::string checkpoint_path;
    std::string log_path;
    std::vector<EpochLog> epochs;
};

// Full training loop. Per step: seeded shuffle delivers the next batch,
// augmentation, boundary targets from the augmented masks, forward in train
// mode, hard-example-mined segmentation + attention losses and the per-unit
// boundary BCE terms (ablation flags honored), backward, SGD with the poly
// schedule. Writes `train_log.csv` (epoch,iter,lr,l_seg,l_am,l_bc_mean,total)
// and `checkpoint.fbwc` under out_dir. Deterministic for a fixed config;
// throws on a non-finite loss, naming the first non-finite tensor.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& data, const std::string& out_dir);

// Eval-mode metrics over a dataset: MAE is the mean of per-image MAEs;
// IoU/BER come from counts pooled over every pixel of the set. Optionally
// writes a per-sample CSV (index,image,iou,mae,ber) and predicted masks named
// pred_<index>.png under pred_dir.
MetricsRecord evaluate(const FbwcModel& model, const ParamStore& store,
                       const DatasetManifest& data, const std::string& per_sample_csv = "",
                       const std::string& pred_dir = "");

// Controls for the spectral-input probe below.
struct Prop1Config {
    int h = 24, w = 24;
    int n_scenes = 6;
    int width = 8;    // channels of the small CNN's hidden layers
    int steps = 100;  // full-batch SGD steps
    double lr = 0.05;
    double momentum = 0.9;
};

struct Prop1Row {
    std::uint64_t seed = 0;
    std::string condition;  // "plain" or "fft"
    double initial_loss = 0;
    double final_loss = 0;
};

struct Prop1Report {
    std::vector<Prop1Row> rows;
    double mean_plain = 0;
    double mean_fft = 0;
    bool fft_leq_plain = false;
};

// Trains the same 3-layer CNN mask predictor twice per seed on synthetic
// scenes — once on the raw image, once on image + real-spectrum map scaled by
// 1/(h*w) — with identical weights and schedule, and reports initial/final
// BCE losses per (seed, condition) plus the mean comparison. The comparison
// is advisory: it is recorded as measured, not asserted. Requires >= 3 seeds.
// When out_csv is nonempty, writes seed,condition,initial_loss,final_loss.
Prop1Report prop1_probe(const Prop1Config& pc, const std::vector<std::uint64_t>& seeds,
                        const std::string& out_csv = "");

}  // namespace fbwc
