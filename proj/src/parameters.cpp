#include "tags/parameters.hpp"

#include <numeric>

#include "tags/error.hpp"

namespace tags {

const char* group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::PatchEmbed: return "patch_embed";
        case ParamGroup::PositionalEncoding: return "pos_embed";
        case ParamGroup::Attention: return "attention";
        case ParamGroup::Mlp: return "mlp";
        case ParamGroup::Norm: return "norm";
        case ParamGroup::SpatialAdapter: return "spatial_adapter";
        case ParamGroup::AlignmentAdapter: return "alignment_adapter";
        case ParamGroup::Decoder: return "decoder";
        case ParamGroup::PromptEncoder: return "prompt_encoder";
    }
    return "unknown";
}

bool is_trainable(ParamGroup g) { return g != ParamGroup::Attention && g != ParamGroup::Mlp; }

std::size_t ParamSpec::numel() const {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

ParameterPartition partition(const std::vector<ParamSpec>& layout) {
    ParameterPartition p;
    for (const auto& s : layout) {
        if (s.trainable()) {
            p.trainable.push_back(s.name);
            p.trainable_count += s.numel();
        } else {
            p.frozen.push_back(s.name);
            p.frozen_count += s.numel();
        }
    }
    return p;
}

ParameterStore::ParameterStore(const std::vector<ParamSpec>& layout, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& spec : layout) {
        if (index_.count(spec.name)) throw InvalidArgument("duplicate parameter name " + spec.name);
        ad::Tensor t(spec.shape, 0.0);
        switch (spec.init) {
            case Init::Zeros: break;
            case Init::Ones: std::fill(t.data.begin(), t.data.end(), 1.0); break;
            case Init::TruncNormal:
                for (double& v : t.data) {
                    double z;
                    do {
                        z = normal(rng);
                    } while (z < -2.0 || z > 2.0);
                    v = 0.02 * z;
                }
                break;
        }
        index_[spec.name] = specs_.size();
        specs_.push_back(spec);
        // Frozen parameters never receive gradients.
        vars_.push_back(spec.trainable() ? ad::leaf(std::move(t)) : ad::constant(std::move(t)));
    }
}

ParameterStore::ParameterStore(const std::vector<ParamSpec>& layout, std::vector<ad::Tensor> values) {
    if (layout.size() != values.size()) throw InvalidArgument("parameter count does not match layout");
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const auto& spec = layout[i];
        if (index_.count(spec.name)) throw InvalidArgument("duplicate parameter name " + spec.name);
        if (values[i].shape != spec.shape || values[i].numel() != spec.numel()) {
            throw InvalidArgument("parameter " + spec.name + " has shape " + values[i].shape_str());
        }
        index_[spec.name] = specs_.size();
        specs_.push_back(spec);
        vars_.push_back(spec.trainable() ? ad::leaf(std::move(values[i])) : ad::constant(std::move(values[i])));
    }
}

const ad::Var& ParameterStore::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArgument("unknown parameter " + name);
    return vars_[it->second];
}

void ParameterStore::zero_grad() {
    for (auto& v : vars_) v->grad = v->requires_grad ? ad::Tensor(v->value.shape, 0.0) : ad::Tensor();
}

std::size_t ParameterStore::total_count() const {
    std::size_t n = 0;
    for (const auto& s : specs_) n += s.numel();
    return n;
}

}  // namespace tags
