//! Gradient checks over every tape op and the full attention forward pass.
//!
//! Each case draws fresh random inputs at every point and reduces the op
//! output to a scalar through a fixed random weighting, so every output
//! element contributes a distinct gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{bag_features, va_forward, AttentionMode, ChannelAttnVars, ScoreScale, SpatialAttnVars, TargetFeature, VaVars};
use crate::error::Result;
use crate::tensor::{gradcheck, GradcheckConfig, Tape, Tensor, Var};

/// Random points checked per op.
pub const DEFAULT_POINTS: usize = 25;

/// Worst result of one op over all its points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpCheck {
    pub op: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

type Inputs = Vec<Tensor>;
type Loss = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

struct Case {
    name: &'static str,
    draw: fn(&mut ChaCha8Rng) -> (Inputs, Loss),
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, rng)
}

/// Entries bounded away from zero, for ops with a kink there.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    uniform(shape, rng).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Weighted sum `Σ y ⊙ r` of an op output.
fn project(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(y, rv)?;
    tape.sum(p)
}

fn weighted(shape: &'static [usize], op: fn(&mut Tape, &[Var]) -> Result<Var>, rng: &mut ChaCha8Rng) -> Loss {
    let r = uniform(shape, rng);
    Box::new(move |t, v| {
        let y = op(t, v)?;
        project(t, y, &r)
    })
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            draw: |rng| {
                let xs = vec![uniform(&[3, 4], rng), uniform(&[4, 2], rng)];
                (xs, weighted(&[3, 2], |t, v| t.matmul(v[0], v[1]), rng))
            },
        },
        Case {
            name: "conv2d_k1",
            draw: |rng| {
                let xs = vec![uniform(&[3, 4, 4], rng), uniform(&[2, 3, 1, 1], rng)];
                (xs, weighted(&[2, 4, 4], |t, v| t.conv2d(v[0], v[1], 0), rng))
            },
        },
        Case {
            name: "conv2d_k3",
            draw: |rng| {
                let xs = vec![uniform(&[2, 5, 5], rng), uniform(&[3, 2, 3, 3], rng)];
                (xs, weighted(&[3, 5, 5], |t, v| t.conv2d(v[0], v[1], 1), rng))
            },
        },
        Case {
            name: "global_avg_pool",
            draw: |rng| (vec![uniform(&[3, 4, 4], rng)], weighted(&[3], |t, v| t.global_avg_pool(v[0]), rng)),
        },
        Case {
            name: "channel_pool",
            draw: |rng| {
                // Channel values per pixel are kept well apart so the max
                // is unique under the finite-difference step.
                let (c, hw) = (3, 16);
                let mut data = vec![0.0; c * hw];
                for p in 0..hw {
                    let mut order: Vec<usize> = (0..c).collect();
                    for i in (1..c).rev() {
                        order.swap(i, rng.random_range(0..=i));
                    }
                    for (k, &ch) in order.iter().enumerate() {
                        data[ch * hw + p] = k as f64 * 0.5 + rng.random_range(0.0..0.3) - 0.5;
                    }
                }
                let x = Tensor::new([c, 4, 4], data).expect("shape");
                (vec![x], weighted(&[2, 4, 4], |t, v| t.channel_pool(v[0]), rng))
            },
        },
        Case {
            name: "softmax",
            draw: |rng| (vec![uniform(&[2, 5], rng)], weighted(&[2, 5], |t, v| t.softmax(v[0]), rng)),
        },
        Case {
            name: "relu",
            draw: |rng| (vec![off_kink(&[12], rng)], weighted(&[12], |t, v| t.relu(v[0]), rng)),
        },
        Case {
            name: "sigmoid",
            draw: |rng| {
                let x = uniform(&[12], rng).map(|v| 4.0 * v);
                (vec![x], weighted(&[12], |t, v| t.sigmoid(v[0]), rng))
            },
        },
        Case {
            name: "mul_broadcast_channel",
            draw: |rng| {
                let xs = vec![uniform(&[3, 4, 4], rng), uniform(&[3, 1, 1], rng)];
                (xs, weighted(&[3, 4, 4], |t, v| t.mul_broadcast(v[0], v[1]), rng))
            },
        },
        Case {
            name: "mul_broadcast_spatial",
            draw: |rng| {
                let xs = vec![uniform(&[3, 4, 4], rng), uniform(&[1, 4, 4], rng)];
                (xs, weighted(&[3, 4, 4], |t, v| t.mul_broadcast(v[0], v[1]), rng))
            },
        },
        Case {
            name: "add_broadcast",
            draw: |rng| {
                let xs = vec![uniform(&[3, 4, 4], rng), uniform(&[3, 1, 1], rng)];
                (xs, weighted(&[3, 4, 4], |t, v| t.add_broadcast(v[0], v[1]), rng))
            },
        },
        Case {
            name: "add",
            draw: |rng| {
                let xs = vec![uniform(&[2, 3], rng), uniform(&[2, 3], rng)];
                (xs, weighted(&[2, 3], |t, v| t.add(v[0], v[1]), rng))
            },
        },
        Case {
            name: "mul",
            draw: |rng| {
                let xs = vec![uniform(&[2, 3], rng), uniform(&[2, 3], rng)];
                (xs, weighted(&[2, 3], |t, v| t.mul(v[0], v[1]), rng))
            },
        },
        Case {
            name: "scale",
            draw: |rng| (vec![uniform(&[6], rng)], weighted(&[6], |t, v| t.scale(v[0], -1.7), rng)),
        },
        Case {
            name: "sum",
            draw: |rng| {
                let x = uniform(&[2, 3], rng);
                let loss: Loss = Box::new(|t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    t.sum(sq)
                });
                (vec![x], loss)
            },
        },
        Case {
            name: "mean",
            draw: |rng| {
                let x = uniform(&[2, 3], rng);
                let loss: Loss = Box::new(|t, v| {
                    let sq = t.mul(v[0], v[0])?;
                    t.mean(sq)
                });
                (vec![x], loss)
            },
        },
        Case {
            name: "reshape",
            draw: |rng| (vec![uniform(&[2, 6], rng)], weighted(&[3, 4], |t, v| t.reshape(v[0], [3, 4]), rng)),
        },
        Case {
            name: "transpose",
            draw: |rng| (vec![uniform(&[2, 5], rng)], weighted(&[5, 2], |t, v| t.transpose(v[0]), rng)),
        },
        Case {
            name: "stack",
            draw: |rng| {
                let xs = vec![uniform(&[4], rng), uniform(&[4], rng), uniform(&[4], rng)];
                (xs, weighted(&[3, 4], |t, v| t.stack(v), rng))
            },
        },
        Case {
            name: "bce_with_logits",
            draw: |rng| {
                let x = uniform(&[1, 3, 3], rng).map(|v| 3.0 * v);
                let y = Tensor::uniform([1, 3, 3], 0.0, 1.0, rng);
                let loss: Loss = Box::new(move |t, v| t.bce_with_logits(v[0], &y));
                (vec![x], loss)
            },
        },
        Case {
            name: "va_forward",
            draw: draw_va,
        },
    ]
}

/// End-to-end attention with both branches, differentiated with respect to
/// the target map, every other bag member and every attention weight.
fn draw_va(rng: &mut ChaCha8Rng) -> (Inputs, Loss) {
    const C: usize = 4;
    const HIDDEN: usize = 2;
    const N: usize = 3;
    const HW: usize = 4;
    const K: usize = 3;
    let mut xs = vec![uniform(&[C, HW, HW], rng)];
    for _ in 1..N {
        xs.push(uniform(&[C, HW, HW], rng));
    }
    xs.push(uniform(&[HIDDEN, C], rng));
    xs.push(uniform(&[C, HIDDEN], rng));
    xs.push(uniform(&[C, C, 1, 1], rng));
    xs.push(uniform(&[C, 1, 1], rng));
    xs.push(uniform(&[1, 2, K, K], rng));
    xs.push(uniform(&[1, 1, 1, 1], rng));
    xs.push(uniform(&[1, 1, 1], rng));
    let r = uniform(&[C, HW, HW], rng);
    let loss: Loss = Box::new(move |t, v| {
        let tgt = v[0];
        let maps = [v[1], tgt, v[2]];
        let bag = bag_features(t, &maps, &[-1, 0, 1])?;
        let params = VaVars {
            channel: ChannelAttnVars {
                w1: v[3],
                w2: v[4],
                gate_conv: v[5],
                gate_bias: v[6],
            },
            spatial: SpatialAttnVars {
                embed_conv: v[7],
                gate_conv: v[8],
                gate_bias: v[9],
                pad: (K - 1) / 2,
            },
            score_scale: ScoreScale::None,
        };
        let out = va_forward(t, &TargetFeature::new(tgt, 0), &bag, &params, AttentionMode::Both)?;
        project(t, out.out, &r)
    });
    (xs, loss)
}

/// Names of every checked op, in report order.
pub fn op_names() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

/// Runs every case at `points` random points. Points derive from `seed`,
/// so the report is a pure function of its arguments.
pub fn run_suite(seed: u64, points: usize, cfg: &GradcheckConfig) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in cases() {
        let mut worst: f64 = 0.0;
        let mut passed = true;
        for _ in 0..points {
            let (inputs, loss) = (case.draw)(&mut rng);
            let report = gradcheck(|t, v| loss(t, v), &inputs, cfg)?;
            worst = worst.max(report.max_rel_error);
            passed &= report.passed;
        }
        out.push(OpCheck {
            op: case.name.into(),
            points,
            max_rel_error: worst,
            passed,
        });
    }
    Ok(out)
}
