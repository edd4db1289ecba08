#include "embed_router/experiment/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "embed_router/bytes.hpp"
#include "embed_router/errors.hpp"
#include "embed_router/nn/rng.hpp"

namespace embed_router::experiment {
namespace {

constexpr std::uint64_t kSplitStream = 0x5e11;
constexpr std::uint64_t kShuffleStream = 0x5aff1e;

std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    s.erase(0, s.find_first_not_of(ws));
    const auto last = s.find_last_not_of(ws);
    s.erase(last == std::string::npos ? 0 : last + 1);
    return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out{};
    in >> out;
    if (!in || !in.eof()) throw ConfigError("experiment config: bad value for '" + key + "': '" + value + "'");
    return out;
}

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), pattern, v);
    return buf;
}

std::int64_t as_id(const std::optional<std::uint32_t>& v) { return v ? static_cast<std::int64_t>(*v) : -1; }

void say(std::ostream* log, const std::string& line) {
    if (log != nullptr) *log << line << std::endl;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (datasets.empty()) throw ConfigError("experiment needs at least one dataset");
    std::set<std::string> names;
    for (const auto& d : datasets) {
        if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
    }
    try {
        train.validate();
    } catch (const ParamError& e) {
        throw ConfigError(e.what());
    }
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& base_dir,
                                         const std::string& data_dir) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto resolve = [&](const std::string& p) {
        if (base_dir.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (std::filesystem::path(base_dir) / p).string();
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("experiment config line " + std::to_string(line_no) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "seed") {
            cfg.seed = parse_number<std::uint64_t>(key, value);
        } else if (key == "shared_seed") {
            if (value != "true" && value != "false") throw ConfigError("shared_seed must be true or false");
            cfg.shared_seed = value == "true";
        } else if (key == "dataset") {
            cfg.datasets.push_back(data::resolve_dataset(value == "mnist" ? value : resolve(value), data_dir));
        } else if (key == "epochs") {
            cfg.train.epochs = parse_number<std::size_t>(key, value);
        } else if (key == "lr") {
            cfg.train.lr0 = parse_number<double>(key, value);
        } else if (key == "lr_decay_every") {
            cfg.train.lr_decay_every = parse_number<std::size_t>(key, value);
        } else if (key == "lr_decay_factor") {
            cfg.train.lr_decay_factor = parse_number<double>(key, value);
        } else if (key == "batch_size") {
            cfg.train.batch_size = parse_number<std::size_t>(key, value);
        } else if (key == "output_dir") {
            cfg.output_dir = value;
        } else {
            throw ConfigError("experiment config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path, const std::string& data_dir) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open experiment config '" + path + "'");
    std::stringstream text;
    text << in.rdbuf();
    return parse_experiment_config(text.str(), std::filesystem::path(path).parent_path().string(), data_dir);
}

std::string ResultTable::to_csv() const {
    std::string out = "client,dataset,metric,method,accuracy\n";
    for (const auto& r : rows) {
        out += r.client + "," + r.dataset + "," + r.metric + "," + r.method + "," + fmt("%.4f", r.accuracy) + "\n";
    }
    return out;
}

std::string ResultTable::render() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6s %-16s %-6s %-13s %9s\n", "client", "dataset", "metric", "method",
                  "accuracy");
    out << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-6s %-16s %-6s %-13s %9.2f\n", r.client.c_str(), r.dataset.c_str(),
                      r.metric.c_str(), r.method.c_str(), r.accuracy);
        out << buf;
    }
    return out.str();
}

const ResultRow* ResultTable::find(const std::string& client, const std::string& dataset,
                                   const std::string& metric, const std::string& method) const {
    for (const auto& r : rows) {
        if (r.client == client && r.dataset == dataset && r.metric == metric && r.method == method) return &r;
    }
    return nullptr;
}

std::uint64_t party_seed(std::uint64_t seed, bool shared, std::size_t party, std::size_t dataset) {
    if (shared || party == 0) return seed;
    return nn::Rng::derive(seed, (party << 32) | dataset);
}

std::uint64_t split_seed(std::uint64_t seed) { return nn::Rng::derive(seed, kSplitStream); }

std::uint64_t shuffle_seed(std::uint64_t model_seed) { return nn::Rng::derive(model_seed, kShuffleStream); }

nn::TrainResult train_model(const nn::Matrix& rows, std::uint64_t seed, const nn::TrainConfig& cfg) {
    nn::Rng shuffle(shuffle_seed(seed));
    return nn::train(nn::init_autoencoder(seed), rows, cfg, shuffle);
}

EvaluationRun run_evaluation_detailed(const ExperimentConfig& cfg, std::ostream* log) {
    cfg.validate();
    EvaluationRun run;
    const std::size_t k = cfg.datasets.size();

    std::vector<data::LabeledDataset> datasets;
    for (const auto& spec : cfg.datasets) {
        datasets.push_back(data::load_dataset(spec));
        run.splits.push_back(data::split(datasets.back(), split_seed(cfg.seed)));
    }

    for (std::size_t d = 0; d < k; ++d) {
        const auto server = data::subset(datasets[d], run.splits[d].server);
        say(log, "server: training " + cfg.datasets[d].name + " on " + std::to_string(server.size()) + " samples");
        auto trained = train_model(server.x, party_seed(cfg.seed, cfg.shared_seed, 0, d), cfg.train);
        run.index.upsert(matcher::build_centroids(trained.model, server, static_cast<std::uint32_t>(d)));
        run.server_models.push_back(std::move(trained.model));
        run.server_loss.push_back(std::move(trained.loss_history));
    }

    for (std::size_t c = 0; c < 2; ++c) {
        const std::string client = kClientNames[c];
        for (std::size_t d = 0; d < k; ++d) {
            const auto& part = c == 0 ? run.splits[d].client_a : run.splits[d].client_b;
            const auto local = data::subset(datasets[d], part);
            say(log, "client " + client + ": training " + cfg.datasets[d].name + " on " +
                         std::to_string(local.size()) + " samples");
            const auto trained = train_model(local.x, party_seed(cfg.seed, cfg.shared_seed, c + 1, d), cfg.train);

            ClientQueries q{client, d, nn::encode_rows(trained.model, local.x), local.y};
            std::vector<std::int64_t> ca_pred, ca_truth, fa_pred, fa_truth, mse_pred;
            for (std::size_t i = 0; i < local.size(); ++i) {
                const auto a = matcher::assign_hierarchical(q.embeddings[i].values, run.index);
                ca_pred.push_back(as_id(a.expert_id));
                ca_truth.push_back(static_cast<std::int64_t>(d));
                // A fine assignment only counts inside the right expert.
                fa_pred.push_back(a.expert_id == static_cast<std::uint32_t>(d) ? as_id(a.class_id) : -1);
                fa_truth.push_back(local.y[i]);
                mse_pred.push_back(static_cast<std::int64_t>(
                    matcher::mse_baseline_assign(local.x.row(i), run.server_models)));
            }
            const std::string& name = cfg.datasets[d].name;
            run.table.rows.push_back({client, name, "CA", "cosine", matcher::evaluate_accuracy(ca_pred, ca_truth)});
            run.table.rows.push_back(
                {client, name, "CA", "mse_baseline", matcher::evaluate_accuracy(mse_pred, ca_truth)});
            run.table.rows.push_back({client, name, "FA", "cosine", matcher::evaluate_accuracy(fa_pred, fa_truth)});
            run.queries.push_back(std::move(q));
        }
    }
    return run;
}

ResultTable run_evaluation(const ExperimentConfig& cfg, std::ostream* log) {
    return run_evaluation_detailed(cfg, log).table;
}

std::string AblationTable::to_csv() const {
    std::string out = "seed_mode,client,dataset,metric,method,accuracy\n";
    auto emit = [&](const char* mode, const ResultTable& t) {
        for (const auto& r : t.rows) {
            out += std::string(mode) + "," + r.client + "," + r.dataset + "," + r.metric + "," + r.method + "," +
                   fmt("%.4f", r.accuracy) + "\n";
        }
    };
    emit("shared", shared);
    emit("unshared", unshared);
    return out;
}

std::string AblationTable::render() const {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-6s %-16s %-6s %-13s %9s %9s\n", "client", "dataset", "metric", "method",
                  "shared", "unshared");
    out << buf;
    for (std::size_t i = 0; i < shared.rows.size() && i < unshared.rows.size(); ++i) {
        const auto& r = shared.rows[i];
        std::snprintf(buf, sizeof(buf), "%-6s %-16s %-6s %-13s %9.2f %9.2f\n", r.client.c_str(), r.dataset.c_str(),
                      r.metric.c_str(), r.method.c_str(), r.accuracy, unshared.rows[i].accuracy);
        out << buf;
    }
    return out.str();
}

AblationTable run_seed_ablation(const ExperimentConfig& cfg, std::ostream* log) {
    ExperimentConfig leg = cfg;
    AblationTable out;
    leg.shared_seed = true;
    say(log, "seed ablation: shared-seed leg");
    out.shared = run_evaluation(leg, log);
    leg.shared_seed = false;
    say(log, "seed ablation: independent-seed leg");
    out.unshared = run_evaluation(leg, log);
    return out;
}

std::string loss_csv(const std::vector<double>& losses, const nn::TrainConfig& cfg) {
    std::string out = "epoch,learning_rate,loss\n";
    for (std::size_t e = 0; e < losses.size(); ++e) {
        out += std::to_string(e) + "," + fmt("%.17g", nn::learning_rate_at(cfg, e)) + "," +
               fmt("%.17g", losses[e]) + "\n";
    }
    return out;
}

nn::TrainResult train_command(const data::DatasetSpec& spec, std::uint64_t seed, const nn::TrainConfig& cfg,
                              const std::string& model_path, const std::string& loss_csv_path) {
    const auto ds = data::load_dataset(spec);
    const auto parts = data::split(ds, split_seed(seed));
    const auto server = data::subset(ds, parts.server);
    auto result = train_model(server.x, seed, cfg);
    nn::save_model(result.model, model_path);
    const std::string csv = loss_csv(result.loss_history, cfg);
    write_file_bytes(loss_csv_path, std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    return result;
}

}  // namespace embed_router::experiment
