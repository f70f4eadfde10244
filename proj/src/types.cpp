#include "deepview/types.hpp"

#include "deepview/errors.hpp"

#include <string>

namespace deepview {

void validate(const Dataset& data, int class_count) {
    if (data.size() < 1) throw ParameterError("dataset has no rows");
    if (data.dim() < 1) throw DimensionError("dataset has no feature columns");
    if (!data.points.allFinite()) throw ParameterError("dataset contains NaN or Inf");
    if (!data.feature_names.empty() && static_cast<Eigen::Index>(data.feature_names.size()) != data.dim()) {
        throw DimensionError("feature_names length differs from the column count");
    }
    if (data.labels) {
        if (static_cast<Eigen::Index>(data.labels->size()) != data.size()) {
            throw DimensionError("label count differs from the row count");
        }
        for (const int label : *data.labels) {
            if (label < 0 || (class_count > 0 && label >= class_count)) {
                throw ParameterError("label " + std::to_string(label) + " outside [0, " +
                                     std::to_string(class_count) + ")");
            }
        }
    }
}

Dataset subset(const Dataset& data, const std::vector<Eigen::Index>& rows) {
    Dataset out;
    out.points.resize(static_cast<Eigen::Index>(rows.size()), data.dim());
    if (data.labels) out.labels.emplace();
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Eigen::Index r = rows[k];
        if (r < 0 || r >= data.size()) throw ParameterError("row index out of range");
        out.points.row(static_cast<Eigen::Index>(k)) = data.points.row(r);
        if (data.labels) out.labels->push_back((*data.labels)[static_cast<std::size_t>(r)]);
    }
    out.feature_names = data.feature_names;
    out.image_shape = data.image_shape;
    return out;
}

}  // namespace deepview
