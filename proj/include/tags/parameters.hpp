#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tags/autograd.hpp"
#include "tags/volume.hpp"

namespace tags {

enum class ParamGroup {
    PatchEmbed,
    PositionalEncoding,
    Attention,
    Mlp,
    Norm,
    SpatialAdapter,
    AlignmentAdapter,
    Decoder,
    PromptEncoder,
};

const char* group_name(ParamGroup g);
/// Attention and MLP weights of the transformer blocks stay frozen.
bool is_trainable(ParamGroup g);

enum class Init { TruncNormal, Zeros, Ones };

struct ParamSpec {
    std::string name;
    std::vector<int> shape;
    ParamGroup group;
    Init init = Init::TruncNormal;

    std::size_t numel() const;
    bool trainable() const { return is_trainable(group); }
};

struct ParameterPartition {
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;
    std::size_t trainable_count = 0;
    std::size_t frozen_count = 0;

    double trainable_fraction() const {
        const auto total = trainable_count + frozen_count;
        return total ? static_cast<double>(trainable_count) / static_cast<double>(total) : 0.0;
    }
};

ParameterPartition partition(const std::vector<ParamSpec>& layout);

/// Named parameter tensors in declaration order. Each parameter is an
/// autograd leaf that persists across forward passes.
class ParameterStore {
public:
    ParameterStore() = default;
    /// Allocates and initializes every parameter in `layout`: truncated normal
    /// (std 0.02, cut at 2 std) for weights, zeros/ones where requested.
    ParameterStore(const std::vector<ParamSpec>& layout, Rng& rng);
    /// Adopts explicit values, one tensor per spec with matching shape.
    ParameterStore(const std::vector<ParamSpec>& layout, std::vector<ad::Tensor> values);

    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<ParamSpec>& specs() const { return specs_; }
    const std::vector<ad::Var>& vars() const { return vars_; }
    std::size_t size() const { return specs_.size(); }

    void zero_grad();
    std::size_t total_count() const;

private:
    std::vector<ParamSpec> specs_;
    std::vector<ad::Var> vars_;
    std::map<std::string, std::size_t> index_;
};

}  // namespace tags
