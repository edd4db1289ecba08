#include <pthread.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "embed_router/bytes.hpp"
#include "embed_router/errors.hpp"
#include "embed_router/experiment/experiment.hpp"
#include "embed_router/wire/net.hpp"

using namespace embed_router;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string addr = wire::default_address();
    std::string data_dir = data::default_data_dir();
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

experiment::ExperimentConfig load_config(const Globals& g, const std::string& path, const std::string& out_dir) {
    auto cfg = experiment::load_experiment_config(path, g.data_dir);
    if (g.seed) cfg.seed = *g.seed;
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Route client data to server-side experts using autoencoder hidden representations."};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Seed (overrides the config file)");
    app.add_option("--addr", g.addr, "Registry server address host:port")->capture_default_str();
    app.add_option("--data-dir", g.data_dir, "Directory holding the MNIST IDX files")->capture_default_str();

    auto* train = app.add_subcommand("train", "Train an autoencoder on the server split of a dataset");
    std::string train_dataset = "mnist", model_path, loss_path;
    nn::TrainConfig train_cfg;
    train->add_option("--dataset", train_dataset, "\"mnist\" or a dataset spec file")->capture_default_str();
    train->add_option("--model", model_path, "Output model file")->required();
    train->add_option("--loss-csv", loss_path, "Output per-epoch loss CSV (default: <model>.loss.csv)");
    train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
    train->add_option("--lr", train_cfg.lr0)->capture_default_str();
    train->add_option("--batch-size", train_cfg.batch_size)->capture_default_str();

    auto* reg = app.add_subcommand("register", "Compute an expert's centroids and add them to an index");
    std::string reg_model, reg_dataset = "mnist", reg_index;
    std::uint32_t reg_id = 0;
    bool reg_remote = false;
    reg->add_option("--model", reg_model, "Trained model file")->required();
    reg->add_option("--dataset", reg_dataset, "Dataset the model was trained on")->capture_default_str();
    reg->add_option("--expert-id", reg_id, "Expert id")->required();
    reg->add_option("--index", reg_index, "Index file to create or update");
    reg->add_flag("--remote", reg_remote, "Send REGISTER to the server at --addr");

    auto* serve = app.add_subcommand("serve", "Run the registry server");
    std::string serve_index;
    serve->add_option("--index", serve_index, "Index file to load at startup");

    auto* match = app.add_subcommand("match", "Encode one sample locally and ask the server for its expert");
    std::string match_model, match_dataset = "mnist";
    std::size_t match_sample = 0;
    float match_threshold = -1.0f;
    bool coarse_only = false;
    double timeout_s = 5.0;
    match->add_option("--model", match_model, "Client model file")->required();
    match->add_option("--dataset", match_dataset, "Dataset to draw the sample from")->capture_default_str();
    match->add_option("--sample", match_sample, "Row of the dataset")->capture_default_str();
    match->add_option("--threshold", match_threshold, "Rejection threshold; -1 disables")
        ->check(CLI::Range(-1.0f, 1.0f))
        ->capture_default_str();
    match->add_flag("--coarse-only", coarse_only, "Skip the class-level assignment");
    match->add_option("--timeout", timeout_s, "Seconds per network step")->capture_default_str();

    auto* eval = app.add_subcommand("evaluate", "Run the CA/FA evaluation from an experiment config");
    std::string eval_cfg, eval_out;
    eval->add_option("--config", eval_cfg, "Experiment config")->required()->check(CLI::ExistingFile);
    eval->add_option("--output-dir", eval_out, "Overrides output_dir from the config");

    auto* ablation = app.add_subcommand("seed-ablation", "Compare shared and independent client seeds");
    std::string abl_cfg, abl_out;
    ablation->add_option("--config", abl_cfg, "Experiment config")->required()->check(CLI::ExistingFile);
    ablation->add_option("--output-dir", abl_out, "Overrides output_dir from the config");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) {
            const auto spec = data::resolve_dataset(train_dataset, g.data_dir);
            train_cfg.validate();
            if (loss_path.empty()) loss_path = model_path + ".loss.csv";
            const auto result =
                experiment::train_command(spec, g.seed.value_or(0), train_cfg, model_path, loss_path);
            std::printf("trained %s: final loss %.6g, model %s, losses %s\n", spec.name.c_str(),
                        result.loss_history.back(), model_path.c_str(), loss_path.c_str());
        } else if (*reg) {
            if (reg_index.empty() && !reg_remote) throw ConfigError("register needs --index and/or --remote");
            const auto ae = nn::load_model(reg_model);
            const auto ds = data::load_dataset(data::resolve_dataset(reg_dataset, g.data_dir));
            const auto parts = data::split(ds, experiment::split_seed(g.seed.value_or(0)));
            const auto entry = matcher::build_centroids(ae, data::subset(ds, parts.server), reg_id);
            if (!reg_index.empty()) {
                matcher::CentroidIndex index = fs::exists(reg_index) ? matcher::load_index(reg_index)
                                                                      : matcher::CentroidIndex{};
                const bool replaced = index.upsert(entry);
                matcher::save_index(index, reg_index);
                std::printf("%s expert %u in %s (%zu experts)\n", replaced ? "replaced" : "added", reg_id,
                            reg_index.c_str(), index.size());
            }
            if (reg_remote) {
                wire::RegistryClient client(g.addr, std::chrono::seconds(10));
                const auto pong = client.register_expert(entry);
                std::printf("server %s: %s expert %u (%u experts)\n", g.addr.c_str(),
                            pong.replaced ? "replaced" : "added", reg_id, pong.entry_count);
            }
        } else if (*serve) {
            matcher::CentroidIndex index;
            if (!serve_index.empty()) index = matcher::load_index(serve_index);
            // Block the shutdown signals before any thread starts so only the
            // waiter below receives them.
            sigset_t stop_signals;
            sigemptyset(&stop_signals);
            sigaddset(&stop_signals, SIGINT);
            sigaddset(&stop_signals, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);
            wire::RegistryServer server(std::move(index));
            server.start(g.addr);
            std::thread waiter([&] {
                int sig = 0;
                sigwait(&stop_signals, &sig);
                std::fprintf(stderr, "signal %d, shutting down\n", sig);
                server.stop();
            });
            std::printf("serving %zu experts on port %u\n", server.index().size(), server.port());
            std::fflush(stdout);
            server.wait();
            waiter.join();
        } else if (*match) {
            const auto ae = nn::load_model(match_model);
            const auto ds = data::load_dataset(data::resolve_dataset(match_dataset, g.data_dir));
            if (match_sample >= ds.size()) {
                throw ConfigError("sample " + std::to_string(match_sample) + " out of range (dataset has " +
                                  std::to_string(ds.size()) + ")");
            }
            const auto h = nn::encode(ae, ds.x.row(match_sample));
            const auto timeout = std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000));
            const auto r = wire::client_match(g.addr, h.values, match_threshold, !coarse_only, timeout);
            if (r.rejected) {
                std::printf("rejected (top score %.6f)\n", r.top_score);
            } else if (r.class_id == wire::kNone) {
                std::printf("expert %u (score %.6f)\n", r.expert_id, r.top_score);
            } else {
                std::printf("expert %u class %u (score %.6f, label %u)\n", r.expert_id, r.class_id, r.top_score,
                            ds.y[match_sample]);
            }
        } else if (*eval) {
            const auto cfg = load_config(g, eval_cfg, eval_out);
            const auto table = experiment::run_evaluation(cfg, &std::cerr);
            const fs::path out = fs::path(cfg.output_dir) / "evaluation.csv";
            write_text(out, table.to_csv());
            std::printf("%s", table.render().c_str());
            std::printf("wrote %s\n", out.c_str());
        } else if (*ablation) {
            const auto cfg = load_config(g, abl_cfg, abl_out);
            const auto table = experiment::run_seed_ablation(cfg, &std::cerr);
            const fs::path out = fs::path(cfg.output_dir) / "seed_ablation.csv";
            write_text(out, table.to_csv());
            std::printf("%s", table.render().c_str());
            std::printf("wrote %s\n", out.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const ParamError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
