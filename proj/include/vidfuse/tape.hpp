#ifndef VIDFUSE_TAPE_HPP
#define VIDFUSE_TAPE_HPP

#include <functional>
#include <memory>
#include <vector>

#include "vidfuse/tensor.hpp"

namespace vidfuse {

// Index mapping for gather-style ops (permute, im2col, upsample, row select).
// idx[i] is the flat source index of output element i, or -1 for a zero
// (conv padding). The inverse CSR lists, built once per geometry, let the
// backward scatter-add run parallel over targets without races.
struct GatherPlan {
    std::vector<int64_t> out_shape;
    int64_t in_numel = 0;
    std::vector<int64_t> idx;
    std::vector<int64_t> inv_off;  // size in_numel+1
    std::vector<int64_t> inv_src;  // output positions feeding each input element

    static std::shared_ptr<GatherPlan> make(std::vector<int64_t> out_shape, int64_t in_numel,
                                            std::vector<int64_t> idx);
};

// Reverse-mode autodiff over Tensors. Ops append nodes; node creation order
// is a topological order, so backward() is a single reverse sweep. A tape is
// built per forward pass and discarded afterwards.
class Tape {
public:
    int leaf(Tensor value, bool needs_grad = false);
    int constant(Tensor value) { return leaf(std::move(value), false); }
    int scalar(double value) { return leaf(Tensor({1}, value), false); }

    const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
    const Tensor& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
    // zero tensor when no gradient reached the node
    Tensor grad_or_zero(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.grad.v.empty() ? Tensor(n.val.shape) : n.grad;
    }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].ng; }
    size_t size() const { return nodes_.size(); }

    // elementwise; b may share a's shape, be a's shape with last dim 1, or be scalar
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);

    int scale(int a, double s);
    int add_scalar(int a, double s);
    int neg(int a) { return scale(a, -1.0); }

    int silu(int a);
    int rsqrt_eps(int a, double eps);  // 1/sqrt(a+eps)

    // a: [B..., M, K]; b: [B..., K, N] with equal batch dims, or b: [K, N]
    int matmul(int a, int b);

    int reshape(int a, std::vector<int64_t> shape);
    int gather(int a, std::shared_ptr<GatherPlan> plan);
    int permute(int a, const std::vector<int>& axes);
    int transpose_last(int a);
    int expand0(int a, int64_t n);          // tile along a new leading axis
    int concat0(const std::vector<int>& parts);
    int rows(int table, const std::vector<int64_t>& indices);  // table: [V, D]

    int softmax_last(int a);
    int mean_heads(int a, int64_t h);  // [B*h, T, S] -> [B, T, S]

    int mean_last(int a);  // [..., D] -> [..., 1]
    int min_last(int a);   // subgradient to first argmin
    int max_last(int a);
    int mul_lastvec(int a, int g);  // g: [D] gain over last dim
    int add_lastvec(int a, int b);  // b: [D] bias over last dim

    int sum_all(int a);   // -> [1]
    int mean_all(int a);  // -> [1]
    int mse(int a, int b);        // mean squared error -> [1]
    int sq_diff_mean(int a, int b) { return mse(a, b); }

    int detach(int a) { return constant(val(a)); }

    // Accumulates grads for every needs-grad node reachable from root.
    // root must be a scalar. Call zero_grad() before reusing the tape for a
    // second backward pass.
    void backward(int root);
    void zero_grad();

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool ng = false;
        std::function<void(Tape&, int)> back;  // (tape, self_id)
    };
    std::vector<Node> nodes_;

    int push(Tensor value, bool ng, std::function<void(Tape&, int)> back);
    Tensor& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }
    void accum(int id, const Tensor& g);
    friend struct TapeOps;
};

// Plan builders used by the model code.
std::shared_ptr<GatherPlan> plan_permute(const std::vector<int64_t>& in_shape,
                                         const std::vector<int>& axes);
std::shared_ptr<GatherPlan> plan_im2col(int64_t F, int64_t C, int64_t H, int64_t W, int64_t k,
                                        int64_t stride, int64_t pad);
std::shared_ptr<GatherPlan> plan_upsample2x(int64_t F, int64_t C, int64_t H, int64_t W);
// [F, C*4, H, W] -> [F, C, 2H, 2W]
std::shared_ptr<GatherPlan> plan_pixel_unshuffle_inv(int64_t F, int64_t C4, int64_t H, int64_t W);

}  // namespace vidfuse

#endif
