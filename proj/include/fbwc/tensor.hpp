#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace fbwc {

#ifdef FBWC_SCALAR_F64
using scalar = double;
#else
using scalar = float;
#endif

using index_t = std::int64_t;

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    index_t numel() const {
        return static_cast<index_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Tape;

// Rank-4 NCHW tensor with value semantics. The data buffer is shared between
// copies and treated as immutable once a tensor escapes the op that built it;
// mut() is reserved for construction, parameter updates and running-stat
// buffers. A tensor optionally carries the tape node it was recorded under.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<scalar> values);

    static Tensor zeros(Shape s);
    static Tensor ones(Shape s);
    static Tensor full(Shape s, scalar v);

    Shape shape{};
    std::shared_ptr<std::vector<scalar>> data;
    Tape* tape = nullptr;
    int node = -1;

    index_t numel() const { return shape.numel(); }
    bool empty() const { return !data; }
    bool tracked() const { return tape != nullptr && node >= 0; }

    const scalar* ptr() const { return data->data(); }
    scalar* mut() { return data->data(); }

    scalar at(int i, int j, int y, int x) const;
    scalar item() const;

    // Same buffer, no tape attachment.
    Tensor detached() const;
    // Deep copy of the buffer.
    Tensor clone() const;

    bool all_finite() const;
};

// Reverse-mode gradient tape. Nodes are appended in execution order, so every
// node's inputs precede it; backward() walks the list once in reverse.
// Single-owner: a tape must not be shared across threads, and tensors holding
// a tape pointer must not outlive it.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const std::vector<scalar>& upstream)>;

    // Marks a tensor as a tracked leaf and returns its node id.
    int leaf(Tensor& t);

    // Records an op application. `inputs` holds node ids of tracked inputs
    // (-1 entries allowed for untracked ones); `fn` consumes the upstream
    // gradient of the recorded node and accumulates into input buffers.
    Tensor record(Tensor value, std::vector<int> inputs, BackwardFn fn);

    // Seeds d loss/d loss = 1 and propagates. Throws if loss is not scalar
    // or was not recorded on this tape.
    void backward(const Tensor& loss);

    // Gradient buffer of a node, zero-initialized on first access.
    std::vector<scalar>& grad_buf(int node);
    // Null if no gradient reached the node.
    const std::vector<scalar>* grad(int node) const;
    // Dense gradient of a tracked tensor; zeros if untouched.
    std::vector<scalar> grad_or_zeros(const Tensor& t) const;

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> inputs;
        BackwardFn backward;
        index_t numel = 0;
    };
    std::vector<Node> nodes_;
    std::vector<std::vector<scalar>> grads_;
};

// Named registry of learnable tensors plus their SGD momentum buffers.
// Entries keep insertion order; that order defines gradient/export order.
class ParamStore {
public:
    struct Param {
        std::string name;
        Tensor value;
        std::vector<scalar> velocity;
        bool decay = true;
    };
    struct Buffer {
        std::string name;
        Tensor value;
    };

    // Registers a learnable tensor. `decay` controls weight-decay coupling.
    int add(const std::string& name, Tensor init, bool decay = true);
    // Registers a non-learnable persistent tensor (running stats etc.).
    int add_buffer(const std::string& name, Tensor init);

    Param& param(int idx) { return params.at(static_cast<std::size_t>(idx)); }
    const Param& param(int idx) const { return params.at(static_cast<std::size_t>(idx)); }
    Param* find(const std::string& name);
    Buffer* find_buffer(const std::string& name);

    // Registers every parameter as a leaf of `tape` for one training step.
    void attach(Tape& tape);
    void detach();

    index_t total_params() const;

    std::vector<Param> params;
    std::vector<Buffer> buffers;
};

}  // namespace fbwc
