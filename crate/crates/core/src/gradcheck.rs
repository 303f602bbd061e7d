//! Central finite-difference validation of every analytic gradient path:
//! the bare network engine, the TD loss, the contrastive information
//! estimator, and the united objective end to end through the encoder
//! (including the shared-ones boost path used for static input blocks).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::loss_core::{mi_contrastive, td_loss, united_backward, CriticParams, MiItem, TdItem};
use crate::nn_core::{column_sum, FirstLayerCols, GradBuf, MlpParams};
use crate::opponent_model::EncoderParams;
use crate::pursuer_agent::DqnParams;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Relative disagreement between an analytic and a numeric derivative.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn central<F: FnMut(f64) -> f64>(orig: f64, mut eval: F) -> f64 {
    let up = eval(orig + FD_STEP);
    let dn = eval(orig - FD_STEP);
    eval(orig);
    (up - dn) / (2.0 * FD_STEP)
}

/// Every weight, bias and input coordinate of random MLP shapes.
pub fn suite_mlp() -> SuiteReport {
    let mut shape_rng = ChaCha8Rng::seed_from_u64(0x11);
    let mut max_rel: f64 = 0.0;
    let instances = 24;
    for inst in 0..instances {
        let depth = 2 + (inst % 3);
        let dims: Vec<usize> = (0..=depth).map(|_| shape_rng.gen_range(1..8usize)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(0x200 + inst as u64);
        let p = MlpParams::random(&dims, &mut r);
        let cols = FirstLayerCols::all_tracked(dims[0]);
        let x: Vec<f64> = (0..dims[0]).map(|_| r.gen_range(-1.5..1.5)).collect();
        let probe: Vec<f64> = (0..*dims.last().unwrap()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |p: &MlpParams, x: &[f64]| -> f64 {
            p.infer(x)
                .unwrap()
                .iter()
                .zip(probe.iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, tape) = p.forward(&x).unwrap();
        let mut sink = GradBuf::new(&p, &cols);
        let grad_in = p.backward(&tape, &probe, &cols, &mut sink);

        let mut pm = p.clone();
        for li in 0..p.layers.len() {
            for k in 0..p.layers[li].w.len() {
                let orig = p.layers[li].w[k];
                let fd = central(orig, |v| {
                    pm.layers[li].w[k] = v;
                    loss(&pm, &x)
                });
                let analytic = if li == 0 { sink.l0_w[k] } else { sink.rest[li - 1].0[k] };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
            for k in 0..p.layers[li].b.len() {
                let orig = p.layers[li].b[k];
                let fd = central(orig, |v| {
                    pm.layers[li].b[k] = v;
                    loss(&pm, &x)
                });
                let analytic = if li == 0 {
                    sink.l0_delta_sum[k]
                } else {
                    sink.rest[li - 1].1[k]
                };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
        }
        let mut xm = x.clone();
        for j in 0..x.len() {
            let fd = central(x[j], |v| {
                xm[j] = v;
                loss(&p, &xm)
            });
            max_rel = max_rel.max(rel_err(grad_in[j], fd));
        }
    }
    SuiteReport {
        name: "mlp-backward",
        instances,
        max_rel_err: max_rel,
        tolerance: 1e-4,
    }
}

/// TD loss gradients for the online net and the strategy slices.
pub fn suite_td() -> SuiteReport {
    let mut max_rel: f64 = 0.0;
    let instances = 20;
    for inst in 0..instances {
        let mut r = ChaCha8Rng::seed_from_u64(0x300 + inst as u64);
        let op_w = 4;
        let d_pi = 2;
        let dqn = DqnParams::new(op_w + d_pi, &[5], 100, &mut r);
        let cols = FirstLayerCols::all_tracked(op_w + d_pi);
        let b = 3;
        let ops: Vec<(Vec<u32>, Vec<f64>)> = (0..b)
            .map(|_| {
                (
                    vec![0u32, 2],
                    vec![r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let pis: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d_pi).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let rewards: Vec<f64> = (0..b).map(|_| r.gen_range(-2.0..2.0)).collect();
        // independent target-side strategies: the loss treats the target
        // as a constant, so the probe must not move it
        let next_pis: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d_pi).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let gamma = 0.9;
        let eval = |dqn: &DqnParams, pis: &[Vec<f64>]| -> f64 {
            let items: Vec<TdItem> = (0..b)
                .map(|i| TdItem {
                    op_idx: &ops[i].0,
                    op_val: &ops[i].1,
                    pi: &pis[i],
                    action: i % 3,
                    reward: rewards[i],
                    terminal: i == 0,
                    next_op_idx: &ops[i].0,
                    next_op_val: &ops[i].1,
                    next_pi: &next_pis[i],
                })
                .collect();
            let mut sink = GradBuf::new(&dqn.online, &cols);
            td_loss(dqn, &items, gamma, &cols, None, None, &mut sink)
                .unwrap()
                .l1
        };
        let items: Vec<TdItem> = (0..b)
            .map(|i| TdItem {
                op_idx: &ops[i].0,
                op_val: &ops[i].1,
                pi: &pis[i],
                action: i % 3,
                reward: rewards[i],
                terminal: i == 0,
                next_op_idx: &ops[i].0,
                next_op_val: &ops[i].1,
                next_pi: &next_pis[i],
            })
            .collect();
        let mut sink = GradBuf::new(&dqn.online, &cols);
        let out = td_loss(&dqn, &items, gamma, &cols, None, None, &mut sink).unwrap();

        let mut pert = dqn.clone();
        for li in 0..dqn.online.layers.len() {
            for k in 0..dqn.online.layers[li].w.len() {
                let orig = dqn.online.layers[li].w[k];
                let fd = central(orig, |v| {
                    pert.online.layers[li].w[k] = v;
                    eval(&pert, &pis)
                });
                let analytic = if li == 0 { sink.l0_w[k] } else { sink.rest[li - 1].0[k] };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
        }
        let mut pm = pis.clone();
        for i in 0..b {
            for d in 0..d_pi {
                let fd = central(pis[i][d], |v| {
                    pm[i][d] = v;
                    eval(&dqn, &pm)
                });
                max_rel = max_rel.max(rel_err(out.grad_pi[i][d], fd));
            }
        }
    }
    SuiteReport {
        name: "td-loss",
        instances,
        max_rel_err: max_rel,
        tolerance: 1e-4,
    }
}

/// Contrastive estimator gradients for both critic heads and the
/// strategy inputs.
pub fn suite_mi() -> SuiteReport {
    let mut max_rel: f64 = 0.0;
    let instances = 20;
    for inst in 0..instances {
        let mut r = ChaCha8Rng::seed_from_u64(0x400 + inst as u64);
        let op_w = 6;
        let d_pi = 3;
        let critic = CriticParams::with_dims(op_w, d_pi, 4, 3, &mut r);
        let cols_op = FirstLayerCols::all_tracked(op_w);
        let cols_pi = FirstLayerCols::all_tracked(d_pi);
        let b = 4;
        let idx: Vec<u32> = (0..op_w as u32).collect();
        let ops: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..op_w).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let pis: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d_pi).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let eval = |critic: &CriticParams, pis: &[Vec<f64>]| -> f64 {
            let items: Vec<MiItem> = (0..b)
                .map(|i| MiItem {
                    op_idx: &idx,
                    op_val: &ops[i],
                    pi: &pis[i],
                })
                .collect();
            let mut so = GradBuf::new(&critic.op_proj, &cols_op);
            let mut sp = GradBuf::new(&critic.pi_proj, &cols_pi);
            mi_contrastive(critic, &items, &cols_op, &cols_pi, None, &mut so, &mut sp)
                .unwrap()
                .estimate
        };
        let items: Vec<MiItem> = (0..b)
            .map(|i| MiItem {
                op_idx: &idx,
                op_val: &ops[i],
                pi: &pis[i],
            })
            .collect();
        let mut so = GradBuf::new(&critic.op_proj, &cols_op);
        let mut sp = GradBuf::new(&critic.pi_proj, &cols_pi);
        let out = mi_contrastive(&critic, &items, &cols_op, &cols_pi, None, &mut so, &mut sp).unwrap();

        for li in 0..critic.op_proj.layers.len() {
            for k in 0..critic.op_proj.layers[li].w.len() {
                let orig = critic.op_proj.layers[li].w[k];
                let mut pert = critic.clone();
                let fd = central(orig, |v| {
                    pert.op_proj.layers[li].w[k] = v;
                    eval(&pert, &pis)
                });
                let analytic = if li == 0 { so.l0_w[k] } else { so.rest[li - 1].0[k] };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
        }
        for li in 0..critic.pi_proj.layers.len() {
            for k in 0..critic.pi_proj.layers[li].w.len() {
                let orig = critic.pi_proj.layers[li].w[k];
                let mut pert = critic.clone();
                let fd = central(orig, |v| {
                    pert.pi_proj.layers[li].w[k] = v;
                    eval(&pert, &pis)
                });
                let analytic = if li == 0 { sp.l0_w[k] } else { sp.rest[li - 1].0[k] };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
        }
        let mut pm = pis.clone();
        for i in 0..b {
            for d in 0..d_pi {
                let fd = central(pis[i][d], |v| {
                    pm[i][d] = v;
                    eval(&critic, &pm)
                });
                max_rel = max_rel.max(rel_err(out.grad_pi[i][d], fd));
            }
        }
    }
    SuiteReport {
        name: "mi-contrastive",
        instances,
        max_rel_err: max_rel,
        tolerance: 1e-4,
    }
}

/// Small stand-in for the training layout: a vehicle block followed by a
/// static all-ones block handled through the shared-column boost.
struct TinyLayout {
    op_w: usize,
    veh_w: usize,
    h: usize,
    adj_local: Vec<u32>,
}

impl TinyLayout {
    fn window_cols(&self) -> FirstLayerCols {
        let mut tracked = Vec::new();
        let mut shared = Vec::new();
        for k in 0..self.h {
            let base = (k * self.op_w) as u32;
            tracked.extend(base..base + self.veh_w as u32);
            shared.extend(self.adj_local.iter().map(|&a| base + self.veh_w as u32 + a));
        }
        FirstLayerCols::new(self.h * self.op_w, tracked, shared)
    }
}

/// United objective end to end: finite differences on encoder weights
/// must match the combined TD + information gradient flowing through
/// `united_backward`, with the target side held constant.
pub fn suite_united() -> SuiteReport {
    let mut max_rel: f64 = 0.0;
    let instances = 20;
    for inst in 0..instances {
        let mut r = ChaCha8Rng::seed_from_u64(0x500 + inst as u64);
        let layout = TinyLayout {
            op_w: 7,
            veh_w: 4,
            h: 2,
            adj_local: vec![0, 2],
        };
        let d_pi = 3;
        let mi_weight = 0.7;
        let gamma = 0.9;
        let win_w = layout.h * layout.op_w;
        let encoder = EncoderParams::with_hidden(win_w, &[5], d_pi, &mut r);
        let enc_cols = layout.window_cols();
        let dqn = DqnParams::new(layout.op_w + d_pi, &[4], 100, &mut r);
        let dqn_cols = {
            let mut tracked: Vec<u32> = (0..layout.veh_w as u32).collect();
            tracked.extend(layout.op_w as u32..(layout.op_w + d_pi) as u32);
            let shared: Vec<u32> = layout.adj_local.iter().map(|&a| layout.veh_w as u32 + a).collect();
            FirstLayerCols::new(layout.op_w + d_pi, tracked, shared)
        };
        let critic = CriticParams::with_dims(win_w, d_pi, 4, 3, &mut r);
        let critic_op_cols = layout.window_cols();
        let critic_pi_cols = FirstLayerCols::all_tracked(d_pi);

        // batch: sparse vehicle coords per window slot and per op
        let b = 3;
        let wins: Vec<(Vec<u32>, Vec<f64>)> = (0..b)
            .map(|_| {
                let mut idx = Vec::new();
                let mut val = Vec::new();
                for k in 0..layout.h {
                    let base = (k * layout.op_w) as u32;
                    idx.push(base + 1);
                    val.push(r.gen_range(0.1..1.0));
                    idx.push(base + 3);
                    val.push(r.gen_range(0.1..1.0));
                }
                (idx, val)
            })
            .collect();
        let ops: Vec<(Vec<u32>, Vec<f64>)> = (0..b)
            .map(|_| (vec![0u32, 2], vec![r.gen_range(0.1..1.0), r.gen_range(0.1..1.0)]))
            .collect();
        let rewards: Vec<f64> = (0..b).map(|_| r.gen_range(-2.0..2.0)).collect();
        let next_pis: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..d_pi).map(|_| r.gen_range(-0.5..0.5)).collect())
            .collect();

        // total objective as a function of the encoder parameters
        let eval = |enc: &EncoderParams| -> f64 {
            let boost_enc = column_sum(&enc.mlp, &enc_cols.shared_ones);
            let boost_dqn = column_sum(&dqn.online, &dqn_cols.shared_ones);
            let boost_tgt = column_sum(&dqn.target, &dqn_cols.shared_ones);
            let boost_crit = column_sum(&critic.op_proj, &critic_op_cols.shared_ones);
            let pis: Vec<Vec<f64>> = wins
                .iter()
                .map(|(i, v)| enc.infer(i, v, Some(&boost_enc)).unwrap().0)
                .collect();
            let items: Vec<TdItem> = (0..b)
                .map(|i| TdItem {
                    op_idx: &ops[i].0,
                    op_val: &ops[i].1,
                    pi: &pis[i],
                    action: i % 3,
                    reward: rewards[i],
                    terminal: i == 1,
                    next_op_idx: &ops[i].0,
                    next_op_val: &ops[i].1,
                    next_pi: &next_pis[i],
                })
                .collect();
            let mut sink = GradBuf::new(&dqn.online, &dqn_cols);
            let l1 = td_loss(&dqn, &items, gamma, &dqn_cols, Some(&boost_dqn), Some(&boost_tgt), &mut sink)
                .unwrap()
                .l1;
            let mi_items: Vec<MiItem> = (0..b)
                .map(|i| MiItem {
                    op_idx: &wins[i].0,
                    op_val: &wins[i].1,
                    pi: &pis[i],
                })
                .collect();
            let mut so = GradBuf::new(&critic.op_proj, &critic_op_cols);
            let mut sp = GradBuf::new(&critic.pi_proj, &critic_pi_cols);
            let mi = mi_contrastive(
                &critic,
                &mi_items,
                &critic_op_cols,
                &critic_pi_cols,
                Some(&boost_crit),
                &mut so,
                &mut sp,
            )
            .unwrap()
            .estimate;
            l1 - mi_weight * mi
        };

        // analytic encoder gradient through the united path
        let boost_enc = column_sum(&encoder.mlp, &enc_cols.shared_ones);
        let boost_dqn = column_sum(&dqn.online, &dqn_cols.shared_ones);
        let boost_tgt = column_sum(&dqn.target, &dqn_cols.shared_ones);
        let boost_crit = column_sum(&critic.op_proj, &critic_op_cols.shared_ones);
        let mut pis = Vec::new();
        let mut tapes = Vec::new();
        for (i, v) in &wins {
            let (pi, tape) = encoder.encode(i, v, Some(&boost_enc)).unwrap();
            pis.push(pi.0);
            tapes.push(tape);
        }
        let items: Vec<TdItem> = (0..b)
            .map(|i| TdItem {
                op_idx: &ops[i].0,
                op_val: &ops[i].1,
                pi: &pis[i],
                action: i % 3,
                reward: rewards[i],
                terminal: i == 1,
                next_op_idx: &ops[i].0,
                next_op_val: &ops[i].1,
                next_pi: &next_pis[i],
            })
            .collect();
        let mut sink_q = GradBuf::new(&dqn.online, &dqn_cols);
        let td = td_loss(&dqn, &items, gamma, &dqn_cols, Some(&boost_dqn), Some(&boost_tgt), &mut sink_q).unwrap();
        let mi_items: Vec<MiItem> = (0..b)
            .map(|i| MiItem {
                op_idx: &wins[i].0,
                op_val: &wins[i].1,
                pi: &pis[i],
            })
            .collect();
        let mut so = GradBuf::new(&critic.op_proj, &critic_op_cols);
        let mut sp = GradBuf::new(&critic.pi_proj, &critic_pi_cols);
        let mi = mi_contrastive(
            &critic,
            &mi_items,
            &critic_op_cols,
            &critic_pi_cols,
            Some(&boost_crit),
            &mut so,
            &mut sp,
        )
        .unwrap();
        let mut sink_enc = GradBuf::new(&encoder.mlp, &enc_cols);
        united_backward(
            &encoder,
            &enc_cols,
            &tapes,
            &td.grad_pi,
            Some(&mi.grad_pi),
            mi_weight,
            &mut sink_enc,
        );

        let mut pert = encoder.clone();
        for li in 0..encoder.mlp.layers.len() {
            for k in 0..encoder.mlp.layers[li].w.len() {
                let orig = encoder.mlp.layers[li].w[k];
                let fd = central(orig, |v| {
                    pert.mlp.layers[li].w[k] = v;
                    eval(&pert)
                });
                let analytic = if li == 0 {
                    let out0 = encoder.mlp.layers[0].output;
                    let coord = k / out0;
                    let slot = enc_cols
                        .tracked
                        .iter()
                        .position(|&c| c as usize == coord);
                    match slot {
                        Some(s) => sink_enc.l0_w[s * out0 + k % out0],
                        None => {
                            // shared or frozen column
                            if enc_cols.shared_ones.contains(&(coord as u32)) {
                                sink_enc.l0_delta_sum[k % out0]
                            } else {
                                0.0
                            }
                        }
                    }
                } else {
                    sink_enc.rest[li - 1].0[k]
                };
                max_rel = max_rel.max(rel_err(analytic, fd));
            }
        }
    }
    SuiteReport {
        name: "united-loss",
        instances,
        max_rel_err: max_rel,
        tolerance: 1e-3,
    }
}

pub fn run_all() -> Vec<SuiteReport> {
    vec![suite_mlp(), suite_td(), suite_mi(), suite_united()]
}
