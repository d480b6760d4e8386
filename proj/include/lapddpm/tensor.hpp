#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace lapddpm {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Named collection of dense parameter tensors with deterministic iteration
// order (insertion order). Shapes are fixed once inserted.
class ParamStore {
public:
    void insert(const std::string& name, Mat value) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(value));
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    const Mat& at(const std::string& name) const { return entries_[idx(name)].second; }
    Mat& at(const std::string& name) { return entries_[idx(name)].second; }

    std::size_t size() const { return entries_.size(); }

    const std::pair<std::string, Mat>& entry(std::size_t i) const { return entries_[i]; }
    std::pair<std::string, Mat>& entry(std::size_t i) { return entries_[i]; }

    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }

    // Element count over all tensors.
    std::int64_t numel() const {
        std::int64_t n = 0;
        for (const auto& [name, m] : entries_) n += m.size();
        return n;
    }

    // A store with the same names/shapes, all zeros.
    ParamStore zeros_like() const {
        ParamStore out;
        for (const auto& [name, m] : entries_) out.insert(name, Mat::Zero(m.rows(), m.cols()));
        return out;
    }

private:
    std::size_t idx(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named: " + name);
        return it->second;
    }

    std::vector<std::pair<std::string, Mat>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lapddpm
