#ifndef HDIFF_AUTOGRAD_HPP
#define HDIFF_AUTOGRAD_HPP

#include <functional>
#include <vector>

#include "hdiff/tensor.hpp"

namespace hdiff {

// Reverse-mode autodiff on an append-only tape. Ops append a node holding the
// forward value plus a closure that scatters the node's gradient into its
// parents. Nodes are processed in reverse creation order on backward(), which
// is a valid topological order by construction.
class Tape;

struct Var {
    int id = -1;
};

class Tape {
  public:
    Var leaf(Tensor value, bool needs_grad = false);

    // elementwise
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var silu(Var a);
    Var sigmoid(Var a);

    // x:(B,Ci,H,W)  w:(Co,Ci,kh,kw)  bias:(Co)
    Var conv2d(Var x, Var w, Var bias, int stride, int pad);
    // x:(B,C,H,W)  k:(C,K), K odd; 1D convolution along the slice axis b with
    // zero padding, one filter per channel
    Var depthwise_slice_conv(Var x, Var k);
    // x:(B,C,H,W)  gamma,beta:(C)
    Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
    // x:(N,D)  w:(E,D)  bias:(E) -> (N,E)
    Var linear(Var x, Var w, Var bias);
    Var matmul(Var a, Var b);              // (N,M)x(M,P)
    Var bmm(Var a, Var b);                 // (G,N,M)x(G,M,P)
    Var permute(Var a, std::vector<int> axes);
    Var reshape(Var a, std::vector<int> shape);
    Var softmax_lastdim(Var a);
    Var concat_channels(Var a, Var b);     // along axis 1 of rank-4 tensors
    Var mean_hw(Var a);                    // (B,C,H,W) -> (B,C)
    Var broadcast_hw(Var a, int h, int w); // (B,C) -> (B,C,H,W)
    Var upsample_nearest2x(Var a);
    Var add_channel_vec(Var x, Var v);     // (B,C,H,W) + (C)
    Var mse(Var pred, Var target);         // scalar node, mean squared error
    Var masked_mse(Var pred, Var target, const Tensor& mask);  // mean over mask!=0 entries

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

    void backward(Var loss);

    std::size_t num_nodes() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;

    Node& node(int id) { return nodes_[id]; }
    Tensor& grad_buf(int id);
    bool needs(int id) const { return nodes_[id].needs_grad; }
    int push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
};

}  // namespace hdiff

#endif
