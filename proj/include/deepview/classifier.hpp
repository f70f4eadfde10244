#pragma once

#include "deepview/types.hpp"

#include "json.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace deepview {

enum class ClassifierKind { softmax_linear, mlp, external };

std::string to_string(ClassifierKind kind);

/// A probabilistic classifier f : R^D -> P(C). Implementations are immutable
/// after construction and safe to call from several threads at once.
class Classifier {
public:
    virtual ~Classifier() = default;

    /// Returns an m x C row-stochastic matrix for m input rows.
    virtual Matrix predict_batch(const Matrix& points) const = 0;

    virtual ClassifierKind kind() const = 0;
    virtual int class_count() const = 0;
    virtual Eigen::Index input_dim() const = 0;
    /// Largest number of rows the classifier wants per call.
    virtual std::size_t batch_limit() const = 0;
    /// Opaque identity recorded in cached artifacts.
    virtual std::string id() const = 0;

    Vector predict(const Vector& x) const;

protected:
    void check_input(const Matrix& points) const;
};

using ClassifierHandle = std::shared_ptr<const Classifier>;

/// Index of the largest entry; ties resolve to the lowest index.
int argmax(const Eigen::Ref<const Vector>& probs);

/// Fully connected layer mapping `in` inputs to `out` outputs.
struct DenseLayer {
    Matrix weights;  // out x in
    Vector bias;     // out
};

/// tanh hidden layers followed by a softmax head. With no hidden layers this
/// is multinomial logistic regression (kind softmax_linear).
class NeuralClassifier final : public Classifier {
public:
    static constexpr std::size_t default_batch_limit = 4096;

    explicit NeuralClassifier(std::vector<DenseLayer> layers,
                              std::size_t batch_limit = default_batch_limit);

    Matrix predict_batch(const Matrix& points) const override;
    ClassifierKind kind() const override;
    int class_count() const override;
    Eigen::Index input_dim() const override;
    std::size_t batch_limit() const override { return batch_limit_; }
    std::string id() const override;

    const std::vector<DenseLayer>& layers() const { return layers_; }

    Vector logits(const Vector& x) const;
    /// -log f(x)[label], evaluated through a stable log-softmax.
    double cross_entropy(const Vector& x, int label) const;
    /// Gradient of `cross_entropy` with respect to the input.
    Vector input_gradient(const Vector& x, int label) const;

private:
    std::vector<DenseLayer> layers_;
    std::size_t batch_limit_;
    std::string id_;
};

using NeuralHandle = std::shared_ptr<const NeuralClassifier>;

NeuralHandle make_softmax_linear(Matrix weights, Vector bias);

struct TrainOptions {
    int epochs = 500;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;
    /// 0 means infer as max(label) + 1.
    int class_count = 0;
};

/// Full-batch gradient descent on the mean cross-entropy, starting from zero
/// weights. A step that increases the loss is rejected and the rate halved.
NeuralHandle train_softmax(const Dataset& data, const TrainOptions& options);

/// As train_softmax with one or two tanh hidden layers, initialised uniformly
/// in +-1/sqrt(fan_in) from `options.seed`.
NeuralHandle train_mlp(const Dataset& data, const std::vector<int>& hidden_sizes,
                       const TrainOptions& options);

/// Mean cross-entropy of the model on labelled data.
double mean_cross_entropy(const NeuralClassifier& model, const Dataset& data);

/// Fraction of rows whose argmax prediction equals the label.
double accuracy(const Classifier& model, const Dataset& data);

/// Gradient of the cross-entropy loss at x for built-in classifiers.
/// Throws UnsupportedError for external classifiers.
Vector input_gradient(const Classifier& model, const Vector& x, int true_label);

/// x + epsilon * sign(input_gradient). Throws ParameterError for epsilon < 0.
Vector fgsm(const Classifier& model, const Vector& x, int true_label, double epsilon);

/// Line-oriented request/response channel to an external classifier.
class WireTransport {
public:
    virtual ~WireTransport() = default;
    /// Sends one JSON document and returns the raw reply text.
    virtual std::string exchange(const std::string& request) = 0;
};

/// Spawns `/bin/sh -c command` and speaks newline-delimited JSON over its
/// stdin/stdout.
std::unique_ptr<WireTransport> make_subprocess_transport(const std::string& command);

/// POSTs every request to `<url>/predict`.
std::unique_ptr<WireTransport> make_http_transport(const std::string& url);

/// Proxy for a classifier living in another process. Requests are serialised
/// through an internal lock and batches are split at `batch_limit`.
class ExternalClassifier final : public Classifier {
public:
    ExternalClassifier(std::unique_ptr<WireTransport> transport, int class_count,
                       std::size_t batch_limit, std::string id);

    Matrix predict_batch(const Matrix& points) const override;
    ClassifierKind kind() const override { return ClassifierKind::external; }
    int class_count() const override { return class_count_; }
    Eigen::Index input_dim() const override { return dim_; }
    std::size_t batch_limit() const override { return batch_limit_; }
    std::string id() const override { return id_; }

    /// Number of predict requests sent over the wire so far.
    std::size_t request_count() const { return requests_.load(); }

private:
    nlohmann::json send(const nlohmann::json& request) const;

    std::unique_ptr<WireTransport> transport_;
    int class_count_;
    Eigen::Index dim_ = 0;
    std::size_t batch_limit_;
    std::string id_;
    mutable std::mutex wire_mutex_;
    mutable std::atomic<std::size_t> requests_{0};
};

/// Connects to `http://...` URLs over HTTP and treats anything
/// else as a shell command. Performs the handshake and throws BackendError if
/// the declared class count differs from `class_count`.
std::shared_ptr<const ExternalClassifier> external_connect(const std::string& command_or_url,
                                                           int class_count,
                                                           std::size_t batch_limit);

nlohmann::json to_json(const NeuralClassifier& model);
NeuralHandle neural_from_json(const nlohmann::json& j);
void save_classifier(const NeuralClassifier& model, const std::string& path);
NeuralHandle load_classifier(const std::string& path);

}  // namespace deepview
