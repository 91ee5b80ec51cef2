#pragma once

#include <string>
#include <vector>

#include "hgllim/error.hpp"
#include "hgllim/linalg.hpp"

namespace hgllim {

/// N paired samples stored column-wise: inputs is D x N, targets is L_t x N.
struct TrainingSet {
    Matrix inputs;
    Matrix targets;
    std::vector<std::string> person;  // optional, one per sample when present

    Eigen::Index size() const noexcept { return inputs.cols(); }
    Eigen::Index input_dim() const noexcept { return inputs.rows(); }
    Eigen::Index target_dim() const noexcept { return targets.rows(); }

    void check() const {
        if (inputs.cols() != targets.cols())
            throw ContractError("training set: " + std::to_string(inputs.cols()) + " inputs but " +
                                std::to_string(targets.cols()) + " targets");
        if (!person.empty() && static_cast<Eigen::Index>(person.size()) != inputs.cols())
            throw ContractError("training set: person ids do not match sample count");
        if (!inputs.allFinite() || !targets.allFinite()) throw DataError("training set: non-finite values");
    }

    TrainingSet subset(const std::vector<Eigen::Index>& idx) const {
        TrainingSet out;
        out.inputs.resize(inputs.rows(), static_cast<Eigen::Index>(idx.size()));
        out.targets.resize(targets.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.inputs.col(static_cast<Eigen::Index>(i)) = inputs.col(idx[i]);
            out.targets.col(static_cast<Eigen::Index>(i)) = targets.col(idx[i]);
            if (!person.empty()) out.person.push_back(person[static_cast<std::size_t>(idx[i])]);
        }
        return out;
    }
};

}  // namespace hgllim
