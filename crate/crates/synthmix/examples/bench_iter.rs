// temporary phase-level benchmark
use std::time::Instant;
use ndarray::Array2;
use synthmix::gan::{BundleOptions, ModelBundle, ModelCfg};
use synthmix::rng::StreamRng;

fn main() {
    let cfg = ModelCfg {
        image_side: 128,
        gen_base: 8,
        gen_res_blocks: 2,
        disc_base: 8,
        inspector_base: 8,
        seg_head_ch: 12,
        ..ModelCfg::default()
    };
    let opts = BundleOptions { k: 8, ..BundleOptions::default() };
    let mut bundle = ModelBundle::<f32>::build(&cfg, &opts, 1).unwrap();
    let mut rng = StreamRng::new(5, 200);
    let x = Array2::from_shape_simple_fn((128, 128), || rng.uniform_in(-0.9, 0.9) as f32);

    let reps = 30;
    let t = Instant::now();
    for _ in 0..reps {
        let _ = bundle.g_s2t.translate(&x);
    }
    println!("gen fwd:       {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let (_, tape) = bundle.g_s2t.translate_t(&x);
        let g = Array2::from_elem((128, 128), 1e-4f32);
        bundle.g_s2t.backward(&tape, &g, true);
    }
    println!("gen fwd+bwd:   {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let f = x.to_owned().into_shape_with_order((1, 128, 128)).unwrap();
        let d = bundle.d_t.as_ref().unwrap();
        let (s, tape) = d.forward_t(f);
        let g = s.mapv(|v| v * 1e-4);
        bundle.d_t.as_mut().unwrap().backward(&tape, g, true);
    }
    println!("disc fwd+bwd:  {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let insp = bundle.inspector.as_mut().unwrap();
        let (out, tape) = insp.arch.inspect_t(&insp.store, &x).unwrap();
        let gp = out.patch_logits.mapv(|v| v * 1e-4);
        insp.arch.backward(&mut insp.store, &tape, &gp, 0.0, true);
    }
    println!("insp fwd+bwd:  {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let f = x.to_owned().into_shape_with_order((1, 128, 128)).unwrap();
        let (feats, tpe) = bundle.g_t2s.encoder.forward_t(f);
        let (logits, tph) = bundle.seg_head.forward_t(feats);
        let y = Array2::from_elem((128, 128), 1u8);
        let (_, d) = synthmix::gan::seg_loss(&logits, &y).unwrap();
        let gf = bundle.seg_head.backward(&tph, d, true);
        bundle.g_t2s.encoder.backward(&tpe, gf, true);
    }
    println!("seg fwd+bwd:   {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);

    let t = Instant::now();
    for _ in 0..reps {
        let y = Array2::from_elem((128, 128), 1u8);
        let f = x.to_owned().into_shape_with_order((1, 128, 128)).unwrap();
        let (logits, _) = bundle.seg_head.forward_t(bundle.g_t2s.encoder.forward(f));
        let _ = synthmix::gan::seg_loss(&logits, &y).unwrap();
    }
    println!("seg_loss incl fwd: {:6.2} ms", t.elapsed().as_secs_f64() * 1e3 / reps as f64);
}
