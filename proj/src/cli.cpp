#include "deepview/app.hpp"

#include "deepview/datasets.hpp"
#include "deepview/errors.hpp"
#include "deepview/rng.hpp"

#include "CLI11.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace deepview {

using nlohmann::json;

namespace {

struct ModelSource {
    std::string model_path;
    std::string external;
    int classes = 0;
    std::size_t batch_limit = 256;

    void add_options(CLI::App& cmd) {
        cmd.add_option("--model", model_path, "Classifier JSON written by `train`");
        cmd.add_option("--external", external, "Shell command or http:// URL of an external classifier");
        cmd.add_option("--classes", classes, "Class count the external classifier must declare");
        cmd.add_option("--batch-limit", batch_limit, "Points per request to the external classifier");
    }

    ClassifierHandle load() const {
        if (model_path.empty() == external.empty()) {
            throw ParameterError("give exactly one of --model and --external");
        }
        if (!model_path.empty()) return load_classifier(model_path);
        if (classes < 2) throw ParameterError("--external needs --classes >= 2");
        return external_connect(external, classes, batch_limit);
    }
};

struct ConfigOptions {
    std::string config_path;
    std::optional<double> lambda;
    std::optional<double> lambda_factor;
    std::optional<std::uint64_t> seed;
    std::vector<int> grid;
    std::optional<int> workers;
    std::optional<int> k;
    std::optional<int> epochs;
    bool accel = false;
    bool select = false;

    void add_options(CLI::App& cmd) {
        cmd.add_option("--config", config_path, "JSON file with (partial) pipeline settings");
        cmd.add_option("--lambda", lambda, "Absolute regularisation weight of the Euclidean term");
        cmd.add_option("--lambda-factor", lambda_factor, "Regularisation weight relative to the data scale");
        cmd.add_option("--seed", seed, "Seed for the embedding and the quality split");
        cmd.add_option("--grid", grid, "Grid width and height")->expected(2);
        cmd.add_option("--workers", workers, "Worker threads");
        cmd.add_option("--k", k, "Neighbours per point in the fuzzy graph");
        cmd.add_option("--epochs", epochs, "Embedding optimisation epochs");
        cmd.add_flag("--accel", accel, "Evaluate the inverse map with local anchors only");
        cmd.add_flag("--select", select, "Choose lambda and the inverse-map kernel by grid search first");
    }

    PipelineConfig resolve() const {
        PipelineConfig c;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ParameterError("cannot open '" + config_path + "'");
            try {
                c = merge_config(c, json::parse(in));
            } catch (const json::parse_error& e) {
                throw ParameterError("malformed config '" + config_path + "': " + e.what());
            }
        }
        if (lambda) {
            c.metric.lambda = *lambda;
            c.lambda_factor.reset();
        }
        if (lambda_factor) c.lambda_factor = *lambda_factor;
        if (seed) {
            c.umap.seed = *seed;
            c.quality.seed = *seed;
        }
        if (grid.size() == 2) {
            c.grid.width = grid[0];
            c.grid.height = grid[1];
        }
        if (workers) c.workers = *workers;
        if (k) c.umap.k = *k;
        if (epochs) c.umap.epochs = *epochs;
        if (accel && !c.accel) c.accel = DelaunayParams{};
        c.validate();
        return c;
    }
};

// Applies --select: replaces lambda and inverse.a with the grid-search winners.
PipelineConfig maybe_select(const PipelineConfig& config, bool select, const Dataset& data, const Classifier& f) {
    if (!select) return config;
    const ParameterSelection s = select_parameters(data, f, config);
    for (const auto& [lambda, q] : s.q_knn_by_lambda) spdlog::info("lambda {:.6g}: Q_kNN {:.4f}", lambda, q);
    for (const auto& [a, q] : s.q_d_by_a) spdlog::info("a {:.6g}: Q_d {:.4f}", a, q);
    spdlog::info("selected lambda {:.6g}, a {:.6g}", s.lambda, s.a);
    return with_selection(config, s);
}

void write_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing '" + path + "'");
}

void print_quality(const QualityReport& q) {
    std::cout << "Q_kNN       " << q.q_knn << '\n';
    if (q.q_knn_eucl) std::cout << "Q_kNN^eucl  " << *q.q_knn_eucl << '\n';
    std::cout << "Q_d         " << q.q_d << '\n';
    std::cout << "Q_nd        " << q.q_nd << '\n';
    std::cout << to_json(q).dump() << '\n';
}

int cmd_train(const std::string& data_path, const std::string& out, const std::vector<int>& hidden,
              const TrainOptions& options) {
    const Dataset data = read_csv(data_path);
    const NeuralHandle model = hidden.empty() ? train_softmax(data, options) : train_mlp(data, hidden, options);
    save_classifier(*model, out);
    std::cout << "training accuracy " << accuracy(*model, data) << '\n';
    return 0;
}

int cmd_map(const std::string& data_path, const ModelSource& source, const ConfigOptions& options,
            const std::string& out, const std::string& cache_path) {
    const Dataset data = read_csv(data_path);
    const ClassifierHandle f = source.load();
    const PipelineConfig config = maybe_select(options.resolve(), options.select, data, *f);

    std::optional<DistanceMatrix> cached;
    if (!cache_path.empty() && std::filesystem::exists(cache_path)) {
        std::ifstream in(cache_path);
        try {
            cached = distance_matrix_from_json(json::parse(in));
        } catch (const json::parse_error& e) {
            throw ParameterError("malformed distance cache: " + std::string(e.what()));
        }
    }
    RunHooks hooks;
    hooks.cached_distances = cached ? &*cached : nullptr;
    const PipelineResult result = run(data, *f, config, hooks);
    const auto png = render_png(result.map);

    write_bytes(out + ".map.json", to_json(result.map).dump());
    write_bytes(out + ".png", std::string(png.begin(), png.end()));
    if (!cache_path.empty()) write_bytes(cache_path, to_json(result.distances).dump());
    print_quality(result.map.quality);
    return 0;
}

int cmd_eval(const std::string& data_path, const ModelSource& source, ConfigOptions options, bool baseline) {
    const Dataset data = read_csv(data_path);
    PipelineConfig config = options.resolve();
    config.quality.euclidean_baseline = config.quality.euclidean_baseline || baseline;
    const ClassifierHandle f = source.load();
    config = maybe_select(config, options.select, data, *f);
    const PipelineResult result = run(data, *f, config);
    print_quality(result.map.quality);
    return 0;
}

int cmd_adversarial(const std::string& data_path, const ModelSource& source, const std::string& out,
                    std::optional<double> epsilon, int count, std::uint64_t seed) {
    Dataset data = read_csv(data_path);
    if (!data.labels) throw ParameterError("adversarial examples need a labelled dataset");
    if (count < 1) throw ParameterError("--count must be >= 1");
    const ClassifierHandle f = source.load();
    if (f->input_dim() != data.dim()) throw DimensionError("data and classifier dimensions differ");

    const std::vector<int> predicted = predicted_labels(*f, data.points);
    std::vector<Eigen::Index> correct;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        if (predicted[static_cast<std::size_t>(i)] == (*data.labels)[static_cast<std::size_t>(i)]) correct.push_back(i);
    }
    if (correct.empty()) throw ParameterError("the classifier gets no point right");
    Rng rng(seed);
    rng.shuffle(correct);

    // Sweep step for the smallest flipping epsilon: 0.5% of the widest feature range.
    const double range = (data.points.colwise().maxCoeff() - data.points.colwise().minCoeff()).maxCoeff();
    const double step = range > 0.0 ? 0.005 * range : 0.01;

    int made = 0;
    for (std::size_t c = 0; c < correct.size() && made < count; ++c) {
        const Eigen::Index i = correct[c];
        const int truth = (*data.labels)[static_cast<std::size_t>(i)];
        const Vector x = data.points.row(i).transpose();
        std::optional<Vector> adv;
        double used = 0.0;
        if (epsilon) {
            Vector candidate = fgsm(*f, x, truth, *epsilon);
            if (argmax(f->predict(candidate)) != truth) adv = std::move(candidate);
            used = *epsilon;
        } else {
            for (int s = 1; s <= 1000 && !adv; ++s) {
                Vector candidate = fgsm(*f, x, truth, s * step);
                if (argmax(f->predict(candidate)) != truth) {
                    adv = std::move(candidate);
                    used = s * step;
                }
            }
        }
        if (!adv) continue;
        const Vector probs = f->predict(*adv);
        data.points.conservativeResize(data.size() + 1, Eigen::NoChange);
        data.points.row(data.size() - 1) = adv->transpose();
        data.labels->push_back(truth);
        std::cout << json{{"row", data.size() - 1},
                          {"source_row", i},
                          {"epsilon", used},
                          {"true_label", truth},
                          {"predicted_label", argmax(probs)},
                          {"confidence", probs.maxCoeff()}}
                         .dump()
                  << '\n';
        ++made;
    }
    if (made == 0) throw Error("no adversarial example flipped the prediction");
    write_csv(data, out);
    return 0;
}

int cmd_serve(const std::string& data_path, const ModelSource& source, const ConfigOptions& options,
              const std::string& host, int port, const std::string& static_dir) {
    Dataset data = read_csv(data_path);
    const ClassifierHandle f = source.load();
    const PipelineConfig config = maybe_select(options.resolve(), options.select, data, *f);
    Session session(std::move(data), f, config);
    ApiServer server(session, static_dir);
    const int bound = server.bind(host, port);
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    session.start_recompute(config);
    spdlog::info("serving on http://{}:{}", host, bound);
    server.listen();
    return 0;
}

int cmd_blobs(const std::string& out, BlobsOptions options) {
    write_csv(make_blobs(options), out);
    return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
    if (!spdlog::get("deepview")) {
        auto logger = spdlog::stderr_color_mt("deepview");
        spdlog::set_default_logger(logger);
    }

    CLI::App app{"Decision maps of probabilistic classifiers"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::string data_path;
    std::string out;
    ModelSource source;
    ConfigOptions config;

    auto* train = app.add_subcommand("train", "Fit a built-in classifier on a labelled CSV");
    std::vector<int> hidden;
    TrainOptions train_options;
    train->add_option("--data", data_path, "Labelled CSV")->required();
    train->add_option("--out", out, "Output model JSON")->required();
    train->add_option("--hidden", hidden, "Hidden layer sizes (empty: softmax regression)")->delimiter(',');
    train->add_option("--epochs", train_options.epochs, "Gradient descent epochs");
    train->add_option("--lr", train_options.learning_rate, "Learning rate");
    train->add_option("--seed", train_options.seed, "Initialisation seed");

    auto* map = app.add_subcommand("map", "Compute a decision map (.map.json and .png)");
    std::string cache_path;
    map->add_option("--data", data_path, "Dataset CSV")->required();
    map->add_option("--out", out, "Output prefix")->required();
    map->add_option("--cache", cache_path, "Distance matrix cache file (read if present, then written)");
    source.add_options(*map);
    config.add_options(*map);

    auto* eval = app.add_subcommand("eval", "Print the quality report of a map");
    bool baseline = false;
    eval->add_option("--data", data_path, "Dataset CSV")->required();
    eval->add_flag("--euclidean-baseline", baseline, "Also report Q_kNN of a Euclidean embedding");
    source.add_options(*eval);
    config.add_options(*eval);

    auto* adversarial = app.add_subcommand("adversarial", "Append FGSM examples to a dataset");
    std::optional<double> epsilon;
    int count = 1;
    std::uint64_t adv_seed = 0;
    adversarial->add_option("--data", data_path, "Labelled dataset CSV")->required();
    adversarial->add_option("--out", out, "Output CSV")->required();
    adversarial->add_option("--epsilon", epsilon, "Step size (default: smallest flipping value)");
    adversarial->add_option("--count", count, "Number of examples");
    adversarial->add_option("--seed", adv_seed, "Selects the source points");
    source.add_options(*adversarial);

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string static_dir;
    serve->add_option("--data", data_path, "Dataset CSV")->required();
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");
    serve->add_option("--static-dir", static_dir, "Directory with the built UI");
    source.add_options(*serve);
    config.add_options(*serve);

    auto* blobs = app.add_subcommand("blobs", "Write a synthetic Gaussian-blobs dataset");
    BlobsOptions blob_options;
    blobs->add_option("--out", out, "Output CSV")->required();
    blobs->add_option("--classes", blob_options.classes, "Class count");
    blobs->add_option("--per-class", blob_options.per_class, "Points per class");
    blobs->add_option("--dim", blob_options.dim, "Dimension");
    blobs->add_option("--noise", blob_options.noise_std, "Standard deviation of the noise dimensions");
    blobs->add_option("--seed", blob_options.seed, "Seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 2;
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (*train) return cmd_train(data_path, out, hidden, train_options);
        if (*map) return cmd_map(data_path, source, config, out, cache_path);
        if (*eval) return cmd_eval(data_path, source, config, baseline);
        if (*adversarial) return cmd_adversarial(data_path, source, out, epsilon, count, adv_seed);
        if (*serve) return cmd_serve(data_path, source, config, host, port, static_dir);
        if (*blobs) return cmd_blobs(out, blob_options);
    } catch (const ValidationError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 2;
}

}  // namespace deepview
