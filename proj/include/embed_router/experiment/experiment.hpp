#pragma once

// Evaluation harness: server autoencoders per dataset, per-client
// autoencoders trained on the client splits, then coarse/fine assignment
// accuracy of the client embeddings plus the raw-data MSE baseline.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "embed_router/data/dataset.hpp"
#include "embed_router/matcher/matcher.hpp"
#include "embed_router/nn/train.hpp"

namespace embed_router::experiment {

struct ExperimentConfig {
    std::vector<data::DatasetSpec> datasets;
    std::uint64_t seed = 0;
    bool shared_seed = true;  // clients initialize from the server seed
    nn::TrainConfig train{};
    std::string output_dir = "results";

    // Throws ConfigError when there are no datasets, names repeat, or the
    // training config is invalid.
    void validate() const;
};

// key=value lines: seed, shared_seed (true|false), dataset (repeatable; "mnist"
// or a dataset spec path), epochs, lr, lr_decay_every, lr_decay_factor,
// batch_size, output_dir. Relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& base_dir,
                                         const std::string& data_dir);
ExperimentConfig load_experiment_config(const std::string& path, const std::string& data_dir);

struct ResultRow {
    std::string client;   // "A" or "B"
    std::string dataset;
    std::string metric;   // "CA" or "FA"
    std::string method;   // "cosine" or "mse_baseline"
    double accuracy = 0.0;
};

struct ResultTable {
    std::vector<ResultRow> rows;

    // client,dataset,metric,method,accuracy with 4 decimals.
    std::string to_csv() const;
    std::string render() const;
    const ResultRow* find(const std::string& client, const std::string& dataset, const std::string& metric,
                          const std::string& method) const;
};

// Everything an evaluation produced, for callers that need more than the table.
struct ClientQueries {
    std::string client;
    std::size_t dataset = 0;  // expert id of the source dataset
    std::vector<nn::Embedding> embeddings;
    std::vector<std::uint32_t> labels;
};

struct EvaluationRun {
    ResultTable table;
    matcher::CentroidIndex index;
    std::vector<nn::Autoencoder> server_models;
    std::vector<std::vector<double>> server_loss;
    std::vector<data::SplitAssignment> splits;
    std::vector<ClientQueries> queries;
};

inline constexpr const char* kClientNames[2] = {"A", "B"};

// Seed of the autoencoder a party trains. Party 0 is the server; parties 1
// and 2 are clients A and B. Shared seeding returns `seed` for everyone.
std::uint64_t party_seed(std::uint64_t seed, bool shared, std::size_t party, std::size_t dataset);
std::uint64_t split_seed(std::uint64_t seed);
std::uint64_t shuffle_seed(std::uint64_t model_seed);

// Trains one autoencoder from `seed` on `rows` (shuffle stream derived from seed).
nn::TrainResult train_model(const nn::Matrix& rows, std::uint64_t seed, const nn::TrainConfig& cfg);

EvaluationRun run_evaluation_detailed(const ExperimentConfig& cfg, std::ostream* log = nullptr);
ResultTable run_evaluation(const ExperimentConfig& cfg, std::ostream* log = nullptr);

struct AblationTable {
    ResultTable shared;
    ResultTable unshared;

    // seed_mode,client,dataset,metric,method,accuracy
    std::string to_csv() const;
    std::string render() const;
};

AblationTable run_seed_ablation(const ExperimentConfig& cfg, std::ostream* log = nullptr);

// Trains on the server split of `spec` and writes the model plus a loss CSV
// (epoch,learning_rate,loss).
nn::TrainResult train_command(const data::DatasetSpec& spec, std::uint64_t seed, const nn::TrainConfig& cfg,
                              const std::string& model_path, const std::string& loss_csv_path);

std::string loss_csv(const std::vector<double>& losses, const nn::TrainConfig& cfg);

}  // namespace embed_router::experiment
