#pragma once

// Closed-form parameter and FLOP totals for the desk configurations, built
// from per-layer formulas without running a forward pass.
//   conv      params K²·Cin·Cout (+Cout)   flops 2·K²·Cin·Cout·H'·W'
//   dense     params Din·Dout (+Dout)      flops 2·Din·Dout·tokens
//   norm      params 2·C                   flops 2 per element
//   activation / softmax                   flops 2 per element
//   attention products                     flops 2·T·w²·d per product

#include <cstdint>

namespace cost_oracle {

using U = std::uint64_t;

struct Cost {
  U params = 0, flops = 0;

  void conv(U k, U cin, U cout, U out_side, bool bias) {
    params += k * k * cin * cout + (bias ? cout : 0);
    flops += 2 * k * k * cin * cout * out_side * out_side;
  }
  // k×k kernel, stride k: every input pixel feeds k² outputs.
  void conv_t(U k, U cin, U cout, U in_side) {
    params += k * k * cin * cout + cout;
    flops += 2 * k * k * cin * cout * in_side * in_side;
  }
  void dense(U din, U dout, U tokens, bool bias) {
    params += din * dout + (bias ? dout : 0);
    flops += 2 * din * dout * tokens;
  }
  void norm(U channels, U elements) {
    params += 2 * channels;
    flops += 2 * elements;
  }
  void elementwise(U elements) { flops += 2 * elements; }
};

inline Cost autoencoder() {
  Cost c;
  c.conv(3, 12, 16, 32, true);
  c.elementwise(16 * 32 * 32);
  const U w[] = {64, 128, 256, 256, 256};
  U cin = 16, side = 32;
  for (int i = 0; i < 5; ++i) {
    c.conv(3, cin, w[i], side, true);
    c.elementwise(w[i] * side * side);
    cin = w[i];
    if (i < 4) side /= 2;
  }
  for (int i = 3; i >= 0; --i) {
    c.conv_t(2, cin, w[i], side);
    side *= 2;
    c.elementwise(w[i] * side * side);
    cin = w[i];
  }
  c.conv(3, cin, 1, 32, true);
  return c;
}

inline Cost resnet() {
  Cost c;
  c.conv(3, 12, 16, 32, true);
  c.elementwise(16 * 32 * 32);
  c.conv(3, 16, 16, 32, false);
  c.norm(16, 16 * 32 * 32);
  c.elementwise(16 * 32 * 32);
  const U mids[] = {16, 32, 64, 128};
  U cin = 16, side = 32;
  for (int s = 0; s < 4; ++s) {
    const U mid = mids[s], out = 4 * mid, stride = s > 0 ? 2 : 1, o = side / stride;
    c.conv(1, cin, mid, side, false);
    c.norm(mid, mid * side * side);
    c.elementwise(mid * side * side);
    c.conv(3, mid, mid, o, false);
    c.norm(mid, mid * o * o);
    c.elementwise(mid * o * o);
    c.conv(1, mid, out, o, false);
    c.norm(out, out * o * o);
    c.conv(1, cin, out, o, false);  // projection shortcut: every stage changes shape
    c.norm(out, out * o * o);
    c.elementwise(out * o * o);
    cin = out;
    side = o;
  }
  const U dec[] = {64, 32, 16};
  for (U w : dec) {
    c.conv_t(2, cin, w, side);
    side *= 2;
    c.elementwise(w * side * side);
    cin = w;
  }
  c.conv(3, cin, 1, 32, true);
  return c;
}

inline Cost unet() {
  Cost c;
  c.conv(3, 12, 16, 32, true);
  c.elementwise(16 * 32 * 32);
  auto level = [&](U cin, U cout, U side) {
    c.conv(3, cin, cout, side, false);
    c.norm(cout, cout * side * side);
    c.elementwise(cout * side * side);
    c.conv(3, cout, cout, side, false);
    c.norm(cout, cout * side * side);
    c.elementwise(cout * side * side);
  };
  const U w[] = {8, 16, 32, 64, 128};
  U cin = 16;
  for (int l = 0; l < 5; ++l) {
    level(cin, w[l], U{32} >> l);
    cin = w[l];
  }
  for (int l = 3; l >= 0; --l) {
    c.conv_t(2, cin, w[l], U{32} >> (l + 1));
    level(2 * w[l], w[l], U{32} >> l);
    cin = w[l];
  }
  c.conv(1, cin, 1, 32, true);
  return c;
}

inline Cost swin() {
  Cost c;
  c.conv(3, 12, 16, 32, true);
  c.elementwise(16 * 32 * 32);
  const U base = 32, heads = 2, mlp = 4;
  c.conv(2, 16, base, 16, true);
  c.norm(base, 256 * base);
  const U sides[] = {16, 8, 4, 2};
  const U windows[] = {4, 4, 4, 2};
  auto stage = [&](int l) {
    const U d = base << l, n = sides[l] * sides[l], w2 = windows[l] * windows[l];
    for (int b = 0; b < 2; ++b) {
      c.norm(d, n * d);
      c.dense(d, 3 * d, n, true);
      c.flops += 2 * n * w2 * d;      // QKᵀ
      c.elementwise(n * w2 * heads);  // softmax
      c.flops += 2 * n * w2 * d;      // AV
      c.dense(d, d, n, true);
      c.norm(d, n * d);
      c.dense(d, mlp * d, n, true);
      c.elementwise(n * mlp * d);
      c.dense(mlp * d, d, n, true);
    }
  };
  for (int l = 0; l < 4; ++l) {
    stage(l);
    if (l < 3) c.dense(4 * (base << l), 2 * (base << l), sides[l + 1] * sides[l + 1], false);
  }
  for (int l = 2; l >= 0; --l) {
    const U d = base << l;
    c.dense(2 * d, 4 * d, sides[l + 1] * sides[l + 1], false);
    c.dense(2 * d, d, sides[l] * sides[l], true);
    stage(l);
  }
  c.dense(base, 2 * base, 256, false);
  c.norm(base / 2, 1024 * (base / 2));
  c.dense(base / 2, 1, 1024, true);
  return c;
}

}  // namespace cost_oracle
