#include "deepview/classifier.hpp"
#include "deepview/errors.hpp"

#include "httplib.h"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace deepview {

using nlohmann::json;

namespace {

class SubprocessTransport final : public WireTransport {
public:
    explicit SubprocessTransport(const std::string& command) {
        int fds[2];
        if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
            throw BackendError(std::string("socketpair failed: ") + std::strerror(errno));
        }
        pid_ = ::fork();
        if (pid_ < 0) {
            ::close(fds[0]);
            ::close(fds[1]);
            throw BackendError(std::string("fork failed: ") + std::strerror(errno));
        }
        if (pid_ == 0) {
            ::close(fds[0]);
            ::dup2(fds[1], STDIN_FILENO);
            ::dup2(fds[1], STDOUT_FILENO);
            ::close(fds[1]);
            ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::close(fds[1]);
        fd_ = fds[0];
    }

    ~SubprocessTransport() override {
        if (fd_ >= 0) {
            ::shutdown(fd_, SHUT_RDWR);
            ::close(fd_);
        }
        if (pid_ > 0) {
            int status = 0;
            if (::waitpid(pid_, &status, WNOHANG) == 0) {
                ::kill(pid_, SIGTERM);
                ::waitpid(pid_, &status, 0);
            }
        }
    }

    std::string exchange(const std::string& request) override {
        std::string line = request;
        line.push_back('\n');
        std::size_t sent = 0;
        while (sent < line.size()) {
            const ssize_t n = ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                throw BackendError("backend process is not accepting input", buffer_);
            }
            sent += static_cast<std::size_t>(n);
        }
        for (;;) {
            const auto nl = buffer_.find('\n');
            if (nl != std::string::npos) {
                std::string reply = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return reply;
            }
            char chunk[4096];
            const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) throw BackendError("backend process closed its output", buffer_);
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    int fd_ = -1;
    pid_t pid_ = -1;
    std::string buffer_;
};

class HttpTransport final : public WireTransport {
public:
    explicit HttpTransport(const std::string& url) : client_(url) {
        client_.set_read_timeout(300, 0);
    }

    std::string exchange(const std::string& request) override {
        auto res = client_.Post("/predict", request, "application/json");
        if (!res) throw BackendError("HTTP backend unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200) {
            throw BackendError("HTTP backend returned status " + std::to_string(res->status), res->body);
        }
        return res->body;
    }

private:
    httplib::Client client_;
};

}  // namespace

std::unique_ptr<WireTransport> make_subprocess_transport(const std::string& command) {
    return std::make_unique<SubprocessTransport>(command);
}

std::unique_ptr<WireTransport> make_http_transport(const std::string& url) {
    return std::make_unique<HttpTransport>(url);
}

ExternalClassifier::ExternalClassifier(std::unique_ptr<WireTransport> transport, int class_count,
                                       std::size_t batch_limit, std::string id)
    : transport_(std::move(transport)),
      class_count_(class_count),
      batch_limit_(batch_limit),
      id_(std::move(id)) {
    if (class_count_ < 2) throw ParameterError("class_count must be at least 2");
    if (batch_limit_ == 0) throw ParameterError("batch_limit must be positive");
    const json info = send({{"op", "info"}});
    try {
        const int classes = info.at("classes").get<int>();
        const auto dim = info.at("dim").get<Eigen::Index>();
        if (classes != class_count_) {
            throw BackendError("backend declares " + std::to_string(classes) + " classes, expected " +
                                   std::to_string(class_count_),
                               info.dump());
        }
        if (dim < 1) throw BackendError("backend declares a non-positive dimension", info.dump());
        dim_ = dim;
    } catch (const json::exception&) {
        throw BackendError("malformed handshake reply", info.dump());
    }
}

json ExternalClassifier::send(const json& request) const {
    std::string raw;
    {
        std::lock_guard lock(wire_mutex_);
        raw = transport_->exchange(request.dump());
    }
    try {
        json reply = json::parse(raw);
        if (!reply.is_object()) throw BackendError("backend reply is not a JSON object", raw);
        return reply;
    } catch (const json::exception&) {
        throw BackendError("backend reply is not valid JSON", raw);
    }
}

Matrix ExternalClassifier::predict_batch(const Matrix& points) const {
    check_input(points);
    Matrix out(points.rows(), class_count_);
    for (Eigen::Index start = 0; start < points.rows();
         start += static_cast<Eigen::Index>(batch_limit_)) {
        const Eigen::Index count =
            std::min<Eigen::Index>(static_cast<Eigen::Index>(batch_limit_), points.rows() - start);
        json rows = json::array();
        for (Eigen::Index i = start; i < start + count; ++i) {
            rows.push_back(std::vector<double>(points.row(i).begin(), points.row(i).end()));
        }
        requests_.fetch_add(1);
        const json reply = send({{"op", "predict"}, {"points", rows}});
        const auto it = reply.find("probs");
        if (it == reply.end() || !it->is_array() || static_cast<Eigen::Index>(it->size()) != count) {
            throw BackendError("predict reply lacks a probs array of the right length", reply.dump());
        }
        for (Eigen::Index r = 0; r < count; ++r) {
            const auto& row = (*it)[static_cast<std::size_t>(r)];
            if (!row.is_array() || static_cast<int>(row.size()) != class_count_) {
                throw BackendError("predict reply row has the wrong length", reply.dump());
            }
            double sum = 0.0;
            for (int c = 0; c < class_count_; ++c) {
                const auto& v = row[static_cast<std::size_t>(c)];
                if (!v.is_number()) throw BackendError("non-numeric probability", reply.dump());
                const double p = v.get<double>();
                if (!std::isfinite(p) || p < 0.0) {
                    throw BackendError("probability outside [0, 1]", reply.dump());
                }
                out(start + r, c) = p;
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                throw BackendError("probabilities do not sum to 1", reply.dump());
            }
            out.row(start + r) /= sum;
        }
    }
    return out;
}

std::shared_ptr<const ExternalClassifier> external_connect(const std::string& command_or_url,
                                                           int class_count,
                                                           std::size_t batch_limit) {
    const bool http = command_or_url.rfind("http://", 0) == 0;
    auto transport = http ? make_http_transport(command_or_url)
                          : make_subprocess_transport(command_or_url);
    return std::make_shared<const ExternalClassifier>(std::move(transport), class_count,
                                                      batch_limit, "external:" + command_or_url);
}

}  // namespace deepview
