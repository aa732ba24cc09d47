#![allow(dead_code)]

use archft::numkernel::{NdArray, NodeId, Rng, Tape};

pub fn random_array(shape: &[usize], rng: &mut Rng) -> NdArray {
    let n = shape.iter().product();
    NdArray::from_vec(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect())
}

/// Random entries kept at least `gap` away from zero (for kinked ops).
pub fn random_away_from_zero(shape: &[usize], gap: f64, rng: &mut Rng) -> NdArray {
    random_array(shape, rng).map(|v| if v.abs() < gap { v.signum() * gap + v } else { v })
}

/// Largest elementwise relative error between the tape's gradients and
/// central finite differences (step `h`) of `loss = sum(out * R)`.
///
/// The relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is ~0 from dividing roundoff by zero.
pub fn gradcheck<F>(inputs: &[NdArray], build: F, rng: &mut Rng) -> f64
where
    F: Fn(&mut Tape, &[NodeId]) -> NodeId,
{
    const H: f64 = 1e-5;
    const FLOOR: f64 = 1e-3;
    let probe = {
        let mut t = Tape::new();
        let ids: Vec<_> = inputs.iter().map(|a| t.variable(a.clone())).collect();
        let out = build(&mut t, &ids);
        random_array(t.value(out).shape(), rng)
    };
    let eval = |xs: &[NdArray]| -> f64 {
        let mut t = Tape::new();
        let ids: Vec<_> = xs.iter().map(|a| t.variable(a.clone())).collect();
        let out = build(&mut t, &ids);
        t.value(out).data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };
    let mut t = Tape::new();
    let ids: Vec<_> = inputs.iter().map(|a| t.variable(a.clone())).collect();
    let out = build(&mut t, &ids);
    let loss = t.dot(out, probe.clone()).unwrap();
    let grads = t.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).cloned().unwrap_or_else(|| NdArray::zeros(inputs[k].shape()));
        for e in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.data()[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// One randomized gradient-check case per differentiable op. Returns
/// `(op name, shape description, worst relative error)`.
pub fn gradcheck_suite(seed: u64, rounds: usize) -> Vec<(String, String, f64)> {
    use archft::numkernel::{lstm_cell, LstmNodes};
    let mut rng = Rng::new(seed);
    let mut out = Vec::new();
    let dim = |rng: &mut Rng, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    for _ in 0..rounds {
        let (n, k) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 5));
        let s2 = [n, k];
        let a = random_array(&s2, &mut rng);
        let b = random_array(&s2, &mut rng);
        let desc = format!("{s2:?}");
        out.push(("add".into(), desc.clone(), gradcheck(&[a.clone(), b.clone()], |t, x| t.add(x[0], x[1]).unwrap(), &mut rng)));
        out.push(("mul".into(), desc.clone(), gradcheck(&[a.clone(), b.clone()], |t, x| t.mul(x[0], x[1]).unwrap(), &mut rng)));
        out.push(("scale".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.scale(x[0], -1.7), &mut rng)));
        let kinked = random_away_from_zero(&s2, 0.05, &mut rng);
        out.push(("relu".into(), desc.clone(), gradcheck(&[kinked], |t, x| t.relu(x[0]), &mut rng)));
        out.push(("sigmoid".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.sigmoid(x[0]), &mut rng)));
        out.push(("tanh".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.tanh(x[0]), &mut rng)));
        out.push(("sum".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.sum(x[0]), &mut rng)));
        out.push(("softmax".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.softmax(x[0]).unwrap(), &mut rng)));
        out.push(("log_softmax".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.log_softmax(x[0]).unwrap(), &mut rng)));
        let cols: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        out.push(("pick".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.pick(x[0], &cols).unwrap(), &mut rng)));
        out.push(("cross_entropy".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.cross_entropy(x[0], &cols).unwrap(), &mut rng)));
        let start = rng.below(k - 1);
        let len = 1 + rng.below(k - start);
        out.push(("slice_cols".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.slice_cols(x[0], start, len).unwrap(), &mut rng)));
        let rows: Vec<usize> = (0..dim(&mut rng, 1, 5)).map(|_| rng.below(n)).collect();
        out.push(("gather_rows".into(), desc.clone(), gradcheck(&[a.clone()], |t, x| t.gather_rows(x[0], &rows).unwrap(), &mut rng)));

        let (din, dout) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 4));
        let x = random_array(&[n, din], &mut rng);
        let w = random_array(&[dout, din], &mut rng);
        let bias = random_array(&[dout], &mut rng);
        out.push((
            "linear".into(),
            format!("[{n},{din}]x[{dout},{din}]"),
            gradcheck(&[x, w, bias], |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(), &mut rng),
        ));

        let kernel = [1, 3, 5][rng.below(3)];
        let stride = 1 + rng.below(2);
        let pad = kernel / 2;
        let (cn, ci, co, hw) = (dim(&mut rng, 1, 2), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 3, 6));
        let x = random_array(&[cn, ci, hw, hw], &mut rng);
        let w = random_array(&[co, ci, kernel, kernel], &mut rng);
        out.push((
            "conv2d".into(),
            format!("[{cn},{ci},{hw},{hw}] k{kernel} s{stride}"),
            gradcheck(&[x, w], |t, v| t.conv2d(v[0], v[1], stride, pad).unwrap(), &mut rng),
        ));

        let (bn, bc, bh) = (dim(&mut rng, 2, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let x = random_array(&[bn, bc, bh, bh], &mut rng);
        let g = random_array(&[bc], &mut rng);
        let be = random_array(&[bc], &mut rng);
        out.push((
            "batch_norm".into(),
            format!("[{bn},{bc},{bh},{bh}]"),
            gradcheck(&[x.clone(), g.clone(), be.clone()], |t, v| t.batch_norm(v[0], v[1], v[2]).unwrap().0, &mut rng),
        ));
        let mean: Vec<f64> = (0..bc).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        let var: Vec<f64> = (0..bc).map(|_| rng.uniform_range(0.2, 2.0)).collect();
        out.push((
            "channel_affine".into(),
            format!("[{bn},{bc},{bh},{bh}]"),
            gradcheck(&[x.clone(), g, be], |t, v| t.channel_affine(v[0], v[1], v[2], &mean, &var).unwrap(), &mut rng),
        ));
        out.push((
            "global_avg_pool".into(),
            format!("[{bn},{bc},{bh},{bh}]"),
            gradcheck(&[x], |t, v| t.global_avg_pool(v[0]).unwrap(), &mut rng),
        ));
        let probe = random_array(&s2, &mut rng);
        out.push(("dot".into(), desc, gradcheck(&[a], |t, v| t.dot(v[0], probe.clone()).unwrap(), &mut rng)));

        let (e, h) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 3));
        let inputs = [
            random_array(&[n, e], &mut rng),
            random_array(&[n, h], &mut rng),
            random_array(&[n, h], &mut rng),
            random_array(&[4 * h, e], &mut rng),
            random_array(&[4 * h, h], &mut rng),
            random_array(&[4 * h], &mut rng),
        ];
        out.push((
            "lstm_cell".into(),
            format!("N{n} E{e} H{h}"),
            gradcheck(
                &inputs,
                |t, v| {
                    let p = LstmNodes {
                        w_input: v[3],
                        w_hidden: v[4],
                        bias: v[5],
                    };
                    let (hn, cn) = lstm_cell(t, v[0], v[1], v[2], &p).unwrap();
                    t.add(hn, cn).unwrap()
                },
                &mut rng,
            ),
        ));
    }
    out
}

/// Monitor input for a run whose actions settle at `fix_round`: before it,
/// sampled and greedy vectors are random with the greedy vector changing
/// every round; from `fix_round + 1` on both equal `final_vector`.
pub fn settling_trace(
    fix_round: usize,
    rounds: usize,
    final_vector: &[usize],
    seed: u64,
) -> Vec<(archft::archspace::ActionVector, archft::archspace::ActionVector)> {
    use archft::archspace::ActionVector;
    let k = final_vector.len();
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(rounds);
    for r in 1..=rounds {
        if r > fix_round {
            let v = ActionVector(final_vector.to_vec());
            out.push((v.clone(), v));
        } else {
            let sampled = ActionVector((0..k).map(|_| rng.below(2)).collect());
            // alternate the first greedy site so consecutive rounds differ
            let mut g: Vec<usize> = (0..k).map(|_| rng.below(2)).collect();
            g[0] = (r + final_vector[0] + 1 + fix_round) % 2;
            out.push((sampled, ActionVector(g)));
        }
    }
    out
}
