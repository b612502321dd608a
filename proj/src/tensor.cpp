#include "fbwc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fbwc {

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
}

Tensor::Tensor(Shape s) : shape(s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
        throw std::runtime_error("tensor: negative dimension " + s.str());
    data = std::make_shared<std::vector<scalar>>(static_cast<std::size_t>(s.numel()), scalar(0));
}

Tensor::Tensor(Shape s, std::vector<scalar> values) : shape(s) {
    if (static_cast<index_t>(values.size()) != s.numel())
        throw std::runtime_error("tensor: value count " + std::to_string(values.size()) +
                                 " does not match shape " + s.str());
    data = std::make_shared<std::vector<scalar>>(std::move(values));
}

Tensor Tensor::zeros(Shape s) { return Tensor(s); }

Tensor Tensor::ones(Shape s) { return full(s, scalar(1)); }

Tensor Tensor::full(Shape s, scalar v) {
    Tensor t(s);
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
}

scalar Tensor::at(int i, int j, int y, int x) const {
    return (*data)[((static_cast<index_t>(i) * shape.c + j) * shape.h + y) * shape.w + x];
}

scalar Tensor::item() const {
    if (numel() != 1)
        throw std::runtime_error("item: tensor " + shape.str() + " is not scalar");
    return (*data)[0];
}

Tensor Tensor::detached() const {
    Tensor t = *this;
    t.tape = nullptr;
    t.node = -1;
    return t;
}

Tensor Tensor::clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<scalar>>(*data);
    return t;
}

bool Tensor::all_finite() const {
    for (scalar v : *data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

int Tape::leaf(Tensor& t) {
    Node n;
    n.numel = t.numel();
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    t.tape = this;
    t.node = static_cast<int>(nodes_.size()) - 1;
    return t.node;
}

Tensor Tape::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
    Node n;
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
    n.numel = value.numel();
    for (int id : n.inputs)
        if (id >= static_cast<int>(nodes_.size()))
            throw std::runtime_error("tape: input node recorded after its consumer");
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    value.tape = this;
    value.node = static_cast<int>(nodes_.size()) - 1;
    return value;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw std::runtime_error("backward: loss must be scalar, got " + loss.shape.str());
    if (loss.tape != this || loss.node < 0)
        throw std::runtime_error("backward: loss is not recorded on this tape");
    grad_buf(loss.node).assign(1, scalar(1));
    for (int k = static_cast<int>(nodes_.size()) - 1; k >= 0; --k) {
        if (grads_[static_cast<std::size_t>(k)].empty()) continue;  // not on a path to the loss
        if (nodes_[static_cast<std::size_t>(k)].backward)
            nodes_[static_cast<std::size_t>(k)].backward(*this, grads_[static_cast<std::size_t>(k)]);
    }
}

std::vector<scalar>& Tape::grad_buf(int node) {
    if (node < 0 || node >= static_cast<int>(nodes_.size()))
        throw std::runtime_error("tape: bad node id " + std::to_string(node));
    auto& g = grads_[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(static_cast<std::size_t>(nodes_[static_cast<std::size_t>(node)].numel), scalar(0));
    return g;
}

const std::vector<scalar>* Tape::grad(int node) const {
    if (node < 0 || node >= static_cast<int>(nodes_.size())) return nullptr;
    const auto& g = grads_[static_cast<std::size_t>(node)];
    return g.empty() ? nullptr : &g;
}

std::vector<scalar> Tape::grad_or_zeros(const Tensor& t) const {
    if (t.tape != this || t.node < 0)
        throw std::runtime_error("grad_or_zeros: tensor is not tracked on this tape");
    const auto* g = grad(t.node);
    if (g) return *g;
    return std::vector<scalar>(static_cast<std::size_t>(t.numel()), scalar(0));
}

int ParamStore::add(const std::string& name, Tensor init, bool decay) {
    if (find(name))
        throw std::runtime_error("param store: duplicate name '" + name + "'");
    Param p;
    p.name = name;
    p.value = std::move(init);
    p.velocity.assign(static_cast<std::size_t>(p.value.numel()), scalar(0));
    p.decay = decay;
    params.push_back(std::move(p));
    return static_cast<int>(params.size()) - 1;
}

int ParamStore::add_buffer(const std::string& name, Tensor init) {
    if (find_buffer(name))
        throw std::runtime_error("param store: duplicate buffer '" + name + "'");
    buffers.push_back(Buffer{name, std::move(init)});
    return static_cast<int>(buffers.size()) - 1;
}

ParamStore::Param* ParamStore::find(const std::string& name) {
    for (auto& p : params)
        if (p.name == name) return &p;
    return nullptr;
}

ParamStore::Buffer* ParamStore::find_buffer(const std::string& name) {
    for (auto& b : buffers)
        if (b.name == name) return &b;
    return nullptr;
}

void ParamStore::attach(Tape& tape) {
    for (auto& p : params) tape.leaf(p.value);
}

void ParamStore::detach() {
    for (auto& p : params) {
        p.value.tape = nullptr;
        p.value.node = -1;
    }
}

index_t ParamStore::total_params() const {
    index_t total = 0;
    for (const auto& p : params) total += p.value.numel();
    return total;
}

}  // namespace fbwc
