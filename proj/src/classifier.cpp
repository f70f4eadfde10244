#include "deepview/classifier.hpp"

#include "deepview/errors.hpp"
#include "deepview/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace deepview {

using nlohmann::json;

std::string to_string(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::softmax_linear: return "softmax_linear";
        case ClassifierKind::mlp: return "mlp";
        case ClassifierKind::external: return "external";
    }
    return "unknown";
}

Vector Classifier::predict(const Vector& x) const {
    Matrix row = x.transpose();
    return predict_batch(row).row(0).transpose();
}

void Classifier::check_input(const Matrix& points) const {
    if (points.cols() != input_dim()) {
        throw DimensionError("classifier expects " + std::to_string(input_dim()) +
                             " features, got " + std::to_string(points.cols()));
    }
    if (!points.allFinite()) throw DimensionError("classifier input contains NaN or Inf");
}

int argmax(const Eigen::Ref<const Vector>& probs) {
    int best = 0;
    for (Eigen::Index c = 1; c < probs.size(); ++c) {
        if (probs[c] > probs[best]) best = static_cast<int>(c);
    }
    return best;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Softmax of a logit vector, shifted by its maximum.
Vector softmax(const Vector& z) {
    const double zmax = z.maxCoeff();
    Vector e = (z.array() - zmax).exp();
    return e / e.sum();
}

struct Forward {
    std::vector<Vector> activations;  // input, hidden outputs..., logits
};

Forward forward(const std::vector<DenseLayer>& layers, const Vector& x) {
    Forward f;
    f.activations.reserve(layers.size() + 1);
    f.activations.push_back(x);
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Vector z = layers[l].weights * f.activations.back() + layers[l].bias;
        if (l + 1 < layers.size()) z = z.array().tanh();
        f.activations.push_back(std::move(z));
    }
    return f;
}

// Backpropagates dL/dlogits through the network. Fills parameter gradients
// when `grads` is non-null and returns dL/dx.
Vector backward(const std::vector<DenseLayer>& layers, const Forward& f, Vector delta,
                std::vector<DenseLayer>* grads) {
    for (std::size_t l = layers.size(); l-- > 0;) {
        const Vector& input = f.activations[l];
        if (grads) {
            (*grads)[l].weights.noalias() += delta * input.transpose();
            (*grads)[l].bias += delta;
        }
        Vector upstream = layers[l].weights.transpose() * delta;
        if (l > 0) upstream.array() *= 1.0 - input.array().square();
        delta = std::move(upstream);
    }
    return delta;
}

int infer_class_count(const Dataset& data, int requested) {
    if (!data.labels) throw ParameterError("training requires labels");
    const auto& labels = *data.labels;
    int max_label = -1;
    std::set<int> distinct;
    for (int l : labels) {
        if (l < 0) throw ParameterError("labels must be nonnegative");
        max_label = std::max(max_label, l);
        distinct.insert(l);
    }
    const int classes = requested > 0 ? requested : max_label + 1;
    if (max_label >= classes) throw ParameterError("label exceeds class count");
    if (distinct.size() < 2 || classes < 2) {
        throw DegenerateLabelsError("training data must contain at least two classes");
    }
    if (data.size() < classes) throw ParameterError("need at least one sample per class");
    return classes;
}

double loss_of(const std::vector<DenseLayer>& layers, const Dataset& data) {
    const auto& labels = *data.labels;
    double total = 0.0;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const Vector z = forward(layers, data.points.row(i).transpose()).activations.back();
        const double zmax = z.maxCoeff();
        const double lse = zmax + std::log((z.array() - zmax).exp().sum());
        total += lse - z[labels[i]];
    }
    return total / static_cast<double>(data.size());
}

std::vector<DenseLayer> zero_like(const std::vector<DenseLayer>& layers) {
    std::vector<DenseLayer> out;
    for (const auto& l : layers) {
        out.push_back({Matrix::Zero(l.weights.rows(), l.weights.cols()),
                       Vector::Zero(l.bias.size())});
    }
    return out;
}

std::vector<DenseLayer> gradient_of(const std::vector<DenseLayer>& layers, const Dataset& data) {
    auto grads = zero_like(layers);
    const auto& labels = *data.labels;
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        const Forward f = forward(layers, data.points.row(i).transpose());
        Vector delta = softmax(f.activations.back());
        delta[labels[i]] -= 1.0;
        backward(layers, f, std::move(delta), &grads);
    }
    const double scale = 1.0 / static_cast<double>(data.size());
    for (auto& g : grads) {
        g.weights *= scale;
        g.bias *= scale;
    }
    return grads;
}

std::vector<DenseLayer> gradient_descent(std::vector<DenseLayer> layers, const Dataset& data,
                                         const TrainOptions& options) {
    double rate = options.learning_rate;
    if (options.epochs <= 0 || rate == 0.0) return layers;
    double loss = loss_of(layers, data);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        const auto grads = gradient_of(layers, data);
        // Shrink the step until the loss does not increase.
        for (int attempt = 0; attempt < 60; ++attempt) {
            auto trial = layers;
            for (std::size_t l = 0; l < trial.size(); ++l) {
                trial[l].weights -= rate * grads[l].weights;
                trial[l].bias -= rate * grads[l].bias;
            }
            const double trial_loss = loss_of(trial, data);
            if (std::isfinite(trial_loss) && trial_loss <= loss) {
                layers = std::move(trial);
                loss = trial_loss;
                break;
            }
            rate *= 0.5;
        }
    }
    return layers;
}

}  // namespace

NeuralClassifier::NeuralClassifier(std::vector<DenseLayer> layers, std::size_t batch_limit)
    : layers_(std::move(layers)), batch_limit_(batch_limit) {
    if (layers_.empty()) throw ParameterError("network needs at least one layer");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& layer = layers_[l];
        if (layer.weights.rows() != layer.bias.size() || layer.weights.rows() < 1) {
            throw DimensionError("layer weight/bias shapes disagree");
        }
        if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows()) {
            throw DimensionError("consecutive layers do not chain");
        }
        if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
            throw ParameterError("non-finite network parameter");
        }
    }
    if (class_count() < 2) throw ParameterError("classifier needs at least two classes");
    if (batch_limit_ == 0) throw ParameterError("batch_limit must be positive");

    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& layer : layers_) {
        const auto rows = layer.weights.rows();
        const auto cols = layer.weights.cols();
        h = fnv1a(h, &rows, sizeof rows);
        h = fnv1a(h, &cols, sizeof cols);
        h = fnv1a(h, layer.weights.data(), sizeof(double) * layer.weights.size());
        h = fnv1a(h, layer.bias.data(), sizeof(double) * layer.bias.size());
    }
    std::ostringstream os;
    os << to_string(kind()) << ':' << std::hex << h;
    id_ = os.str();
}

ClassifierKind NeuralClassifier::kind() const {
    return layers_.size() == 1 ? ClassifierKind::softmax_linear : ClassifierKind::mlp;
}

int NeuralClassifier::class_count() const {
    return static_cast<int>(layers_.back().weights.rows());
}

Eigen::Index NeuralClassifier::input_dim() const { return layers_.front().weights.cols(); }

std::string NeuralClassifier::id() const { return id_; }

Vector NeuralClassifier::logits(const Vector& x) const {
    return forward(layers_, x).activations.back();
}

Matrix NeuralClassifier::predict_batch(const Matrix& points) const {
    check_input(points);
    Matrix out(points.rows(), class_count());
    // Row by row: each output depends only on its own input row, so results
    // are identical however callers group points into batches.
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        out.row(i) = softmax(logits(points.row(i).transpose())).transpose();
    }
    return out;
}

double NeuralClassifier::cross_entropy(const Vector& x, int label) const {
    if (label < 0 || label >= class_count()) throw ParameterError("label out of range");
    const Vector z = logits(x);
    const double zmax = z.maxCoeff();
    return zmax + std::log((z.array() - zmax).exp().sum()) - z[label];
}

Vector NeuralClassifier::input_gradient(const Vector& x, int label) const {
    if (x.size() != input_dim()) throw DimensionError("gradient input has wrong dimension");
    if (label < 0 || label >= class_count()) throw ParameterError("label out of range");
    const Forward f = forward(layers_, x);
    Vector delta = softmax(f.activations.back());
    delta[label] -= 1.0;
    return backward(layers_, f, std::move(delta), nullptr);
}

NeuralHandle make_softmax_linear(Matrix weights, Vector bias) {
    std::vector<DenseLayer> layers{{std::move(weights), std::move(bias)}};
    return std::make_shared<const NeuralClassifier>(std::move(layers));
}

NeuralHandle train_softmax(const Dataset& data, const TrainOptions& options) {
    const int classes = infer_class_count(data, options.class_count);
    validate(data, classes);
    std::vector<DenseLayer> layers{
        {Matrix::Zero(classes, data.dim()), Vector::Zero(classes)}};
    return std::make_shared<const NeuralClassifier>(gradient_descent(std::move(layers), data, options));
}

NeuralHandle train_mlp(const Dataset& data, const std::vector<int>& hidden_sizes,
                       const TrainOptions& options) {
    if (hidden_sizes.empty()) return train_softmax(data, options);
    if (hidden_sizes.size() > 2) throw ParameterError("at most two hidden layers are supported");
    const int classes = infer_class_count(data, options.class_count);
    validate(data, classes);

    Rng rng(options.seed);
    std::vector<DenseLayer> layers;
    Eigen::Index fan_in = data.dim();
    auto add_layer = [&](Eigen::Index out) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        DenseLayer layer{Matrix(out, fan_in), Vector(out)};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < fan_in; ++c) layer.weights(r, c) = rng.uniform(-bound, bound);
        }
        for (Eigen::Index r = 0; r < out; ++r) layer.bias[r] = rng.uniform(-bound, bound);
        layers.push_back(std::move(layer));
        fan_in = out;
    };
    for (int h : hidden_sizes) {
        if (h < 1) throw ParameterError("hidden layer sizes must be positive");
        add_layer(h);
    }
    add_layer(classes);
    return std::make_shared<const NeuralClassifier>(gradient_descent(std::move(layers), data, options));
}

double mean_cross_entropy(const NeuralClassifier& model, const Dataset& data) {
    if (!data.labels) throw ParameterError("cross-entropy requires labels");
    return loss_of(model.layers(), data);
}

double accuracy(const Classifier& model, const Dataset& data) {
    if (!data.labels) throw ParameterError("accuracy requires labels");
    const Matrix probs = model.predict_batch(data.points);
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if (argmax(probs.row(i).transpose()) == (*data.labels)[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(probs.rows());
}

Vector input_gradient(const Classifier& model, const Vector& x, int true_label) {
    const auto* net = dynamic_cast<const NeuralClassifier*>(&model);
    if (!net) throw UnsupportedError("input gradients need a built-in classifier");
    return net->input_gradient(x, true_label);
}

Vector fgsm(const Classifier& model, const Vector& x, int true_label, double epsilon) {
    if (!(epsilon >= 0.0)) throw ParameterError("epsilon must be nonnegative");
    const Vector g = input_gradient(model, x, true_label);
    Vector out = x;
    for (Eigen::Index d = 0; d < x.size(); ++d) {
        if (g[d] == 0.0) continue;
        out[d] += g[d] > 0.0 ? epsilon : -epsilon;
        // Rounding may overshoot the ball by an ulp; step back towards x.
        while (std::abs(out[d] - x[d]) > epsilon) out[d] = std::nextafter(out[d], x[d]);
    }
    return out;
}

json to_json(const NeuralClassifier& model) {
    json layers = json::array();
    for (const auto& layer : model.layers()) {
        json w = json::array();
        for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
            w.push_back(std::vector<double>(layer.weights.row(r).begin(), layer.weights.row(r).end()));
        }
        layers.push_back({{"weights", w},
                          {"bias", std::vector<double>(layer.bias.begin(), layer.bias.end())}});
    }
    return {{"kind", to_string(model.kind())},
            {"classes", model.class_count()},
            {"dim", model.input_dim()},
            {"layers", layers}};
}

NeuralHandle neural_from_json(const json& j) {
    try {
        std::vector<DenseLayer> layers;
        for (const auto& jl : j.at("layers")) {
            const auto& w = jl.at("weights");
            const auto bias = jl.at("bias").get<std::vector<double>>();
            DenseLayer layer{Matrix(static_cast<Eigen::Index>(w.size()),
                                    w.empty() ? 0 : static_cast<Eigen::Index>(w[0].size())),
                             Vector(static_cast<Eigen::Index>(bias.size()))};
            for (std::size_t r = 0; r < w.size(); ++r) {
                const auto row = w[r].get<std::vector<double>>();
                if (static_cast<Eigen::Index>(row.size()) != layer.weights.cols()) {
                    throw ParameterError("ragged weight matrix in model file");
                }
                for (std::size_t c = 0; c < row.size(); ++c) layer.weights(r, c) = row[c];
            }
            for (std::size_t r = 0; r < bias.size(); ++r) layer.bias[r] = bias[r];
            layers.push_back(std::move(layer));
        }
        return std::make_shared<const NeuralClassifier>(std::move(layers));
    } catch (const json::exception& e) {
        throw ParameterError(std::string("malformed model JSON: ") + e.what());
    }
}

void save_classifier(const NeuralClassifier& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    out << to_json(model).dump() << '\n';
}

NeuralHandle load_classifier(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open model file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParameterError("model file " + path + " is not JSON: " + e.what());
    }
    return neural_from_json(j);
}

}  // namespace deepview
