#include "deepview/datasets.hpp"

#include "deepview/errors.hpp"
#include "deepview/rng.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace deepview {

Dataset make_blobs(const BlobsOptions& o) {
    if (o.classes < 2 || o.per_class < 1 || o.dim < 1 || o.signal_dims < 1 || o.signal_dims > o.dim) {
        throw ParameterError("invalid blobs options");
    }
    Rng rng(o.seed);
    const double radius = o.separation / (2.0 * std::sin(std::numbers::pi / o.classes));
    Matrix means = Matrix::Zero(o.classes, o.dim);
    for (int c = 0; c < o.classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * c / o.classes;
        means(c, 0) = radius * std::cos(angle);
        if (o.signal_dims > 1) means(c, 1) = radius * std::sin(angle);
    }
    Dataset data;
    const int n = o.classes * o.per_class;
    data.points.resize(n, o.dim);
    data.labels.emplace();
    for (int i = 0; i < n; ++i) {
        const int c = i % o.classes;
        for (int d = 0; d < o.dim; ++d) {
            const double std_dev = d < o.signal_dims ? o.signal_std : o.noise_std;
            data.points(i, d) = means(c, d) + std_dev * rng.normal();
        }
        data.labels->push_back(c);
    }
    for (int d = 0; d < o.dim; ++d) data.feature_names.push_back("x" + std::to_string(d));
    return data;
}

Dataset make_xor(int per_cluster, double spread, std::uint64_t seed) {
    if (per_cluster < 1 || !(spread > 0.0)) throw ParameterError("invalid xor options");
    Rng rng(seed);
    Dataset data;
    data.points.resize(4 * per_cluster, 2);
    data.labels.emplace();
    const double cx[4] = {1, -1, -1, 1};
    const double cy[4] = {1, 1, -1, -1};
    for (int i = 0; i < 4 * per_cluster; ++i) {
        const int q = i % 4;
        data.points(i, 0) = cx[q] + spread * rng.normal();
        data.points(i, 1) = cy[q] + spread * rng.normal();
        data.labels->push_back(cx[q] * cy[q] > 0 ? 0 : 1);
    }
    data.feature_names = {"x0", "x1"};
    return data;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        const auto first = field.find_first_not_of(" \t\r");
        const auto last = field.find_last_not_of(" \t\r");
        fields.push_back(first == std::string::npos ? std::string() : field.substr(first, last - first + 1));
    }
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& text, std::size_t line_no) {
    double value = 0.0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(value)) {
        throw ParameterError("line " + std::to_string(line_no) + ": '" + text + "' is not a finite number");
    }
    return value;
}

}  // namespace

Dataset read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParameterError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParameterError("'" + path + "' is empty");
    auto header = split_fields(line);
    const bool labelled = !header.empty() && header.back() == "label";
    if (labelled) header.pop_back();
    if (header.empty()) throw ParameterError("'" + path + "' has no feature columns");

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size() + (labelled ? 1 : 0)) {
            throw ParameterError("line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                 " fields, expected " + std::to_string(header.size() + (labelled ? 1 : 0)));
        }
        std::vector<double> row;
        row.reserve(header.size());
        for (std::size_t d = 0; d < header.size(); ++d) row.push_back(parse_double(fields[d], line_no));
        if (labelled) {
            const double label = parse_double(fields.back(), line_no);
            if (label != std::floor(label) || label < 0 || label > 1e6) {
                throw ParameterError("line " + std::to_string(line_no) + ": label must be a nonnegative integer");
            }
            labels.push_back(static_cast<int>(label));
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw ParameterError("'" + path + "' has no data rows");

    Dataset data;
    data.points.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t d = 0; d < header.size(); ++d) {
            data.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
        }
    }
    if (labelled) data.labels = std::move(labels);
    data.feature_names = std::move(header);

    const auto sidecar = std::filesystem::path(path).replace_extension(".json");
    if (std::filesystem::exists(sidecar)) {
        std::ifstream meta(sidecar);
        try {
            const auto j = nlohmann::json::parse(meta);
            if (j.contains("image_shape")) {
                auto shape = j.at("image_shape").get<std::vector<int>>();
                if (shape.size() != 3 || shape[0] * shape[1] * shape[2] != data.dim() ||
                    (shape[2] != 1 && shape[2] != 3)) {
                    throw ParameterError("image_shape does not match the feature count");
                }
                data.image_shape = std::move(shape);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParameterError("malformed sidecar '" + sidecar.string() + "': " + e.what());
        }
    }
    validate(data);
    return data;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParameterError("cannot write '" + path + "'");
    for (Eigen::Index d = 0; d < data.dim(); ++d) {
        if (d) out << ',';
        out << (data.feature_names.empty() ? "x" + std::to_string(d) : data.feature_names[static_cast<std::size_t>(d)]);
    }
    if (data.labels) out << ",label";
    out << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        for (Eigen::Index d = 0; d < data.dim(); ++d) {
            if (d) out << ',';
            out << data.points(i, d);
        }
        if (data.labels) out << ',' << (*data.labels)[static_cast<std::size_t>(i)];
        out << '\n';
    }
}

}  // namespace deepview
