use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use modpose::analysis::{
    pose_descent, quotient_ssm, read_map_csv, region_of_attraction, ssm_grid, thread_pool, write_difficulty_csv,
    write_map_csv, write_map_pgm, write_pgm_sidecar, write_region_pbm, write_trajectory_csv, CropRenderer,
    DescentOptions, DifficultyReport, GridSpec, PoseRenderer, SphereRenderer,
};
use modpose::autodiff::CHECKPOINT_MAGIC;
use modpose::rotations::{Angle, EquivalenceRelation, PoseSO3};
use modpose::scene1d::{seeded_dataset, CropDataset1D, DATASET_MAGIC};
use modpose::scene3d::{generate_rgb_melon, write_pose_csv, write_ppm, SphereScene};
use modpose::train1d::{save_models, train, RunReport, TrainConfig};
use modpose::{fmt_f64, Result};
use rayon::prelude::*;

use crate::exit::{fail, input_err, lib_err, CliResult, Context, Exit};
use crate::manifest::{Magic, RunManifest, MANIFEST_NAME};
use crate::{Ablate1dArgs, DescentArgs, DifficultyArgs, Gen1dArgs, Gen3dArgs, RoaArgs, SsmArgs, Train1dArgs};

const REPORT_HEADER: &str = "step,loss";
const RUNS_HEADER: &str = "seed,mode,angular_error_deg,reconstruction_mse,final_loss";
const SUMMARY_HEADER: &str = "mode,runs,angular_error_deg_min,angular_error_deg_mean,angular_error_deg_median,\
angular_error_deg_max,reconstruction_mse_min,reconstruction_mse_mean,reconstruction_mse_median,reconstruction_mse_max";
const SPLIT_HEADER: &str = "index,split";
const POSE_HEADER: &str = "index,azimuth_rad,elevation_rad,roll_rad,distance";
const MAP_COLUMNS: &str = "elevation_index,azimuth_index,azimuth_rad,elevation_rad,value";
const REGION_HEADER: &str = "nodes,members,coverage,seed_node,degenerate";
const DIFFICULTY_HEADER: &str = "K,N,D,stderr,n_ref,grid,resolution,degenerate";
const TRAJECTORY_HEADER: &str = "iteration,azimuth_rad,value";

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.txt");
    PathBuf::from(s)
}

fn open_input(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).code(Exit::MissingInput, format!("opening {}", path.display()))
}

fn read_dataset(path: &Path) -> CliResult<CropDataset1D> {
    CropDataset1D::read_from(open_input(path)?).map_err(|e| input_err(path, e))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    let items: Option<Vec<T>> = s.split(',').map(|p| p.trim().parse().ok()).collect();
    match items {
        Some(v) if !v.is_empty() => Ok(v),
        _ => fail(Exit::Usage, format!("cannot parse {what} from '{s}'")),
    }
}

/// `a..b` (inclusive) or a comma-separated list.
fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        match (a.trim().parse::<u64>(), b.trim().parse::<u64>()) {
            (Ok(a), Ok(b)) if a <= b => Ok((a..=b).collect()),
            _ => fail(Exit::Usage, format!("cannot parse seed range '{s}'")),
        }
    } else {
        parse_list(s, "seeds")
    }
}

fn sphere(k: usize, resolution: usize) -> CliResult<SphereRenderer> {
    let scene = SphereScene::reference(k).map_err(lib_err)?;
    if resolution < modpose::scene3d::MIN_RESOLUTION {
        return fail(Exit::InvalidArgument, format!("resolution must be at least {}", modpose::scene3d::MIN_RESOLUTION));
    }
    Ok(SphereRenderer::new(scene).with_resolution(resolution))
}

pub fn gen1d(a: &Gen1dArgs, m: &mut RunManifest) -> CliResult<PathBuf> {
    let ds = seeded_dataset(a.seed, a.n).map_err(lib_err)?;
    m.seeds = vec![a.seed];
    m.write(&a.out, Magic::Bytes(DATASET_MAGIC), |w| ds.write_to(w))?;
    Ok(sidecar(&a.out))
}

fn train_config(mode: &str, order: usize, lr: f64, batch: usize, steps: usize, seed: u64) -> TrainConfig {
    TrainConfig { mode: mode.to_string(), order, learning_rate: lr, batch_size: batch, steps, seed }
}

pub fn train1d(a: &Train1dArgs, m: &mut RunManifest) -> CliResult<PathBuf> {
    let ds = read_dataset(&a.data)?;
    let config = train_config(&a.mode, a.n_order, a.lr, a.batch, a.steps, a.seed);
    let (models, report) = train(&ds, &config).map_err(lib_err)?;
    m.seeds = vec![a.seed];
    m.write(&a.out.join("checkpoint.bin"), Magic::Bytes(CHECKPOINT_MAGIC), |w| save_models(&models, w))?;
    m.write(&a.out.join("report.csv"), Magic::CsvHeader(REPORT_HEADER), |w| report.write_csv(w))?;
    println!(
        "angular_error_deg={} reconstruction_mse={}",
        fmt_f64(report.angular_error.to_degrees()),
        fmt_f64(report.reconstruction_mse)
    );
    Ok(a.out.join(MANIFEST_NAME))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn stats(values: &[f64]) -> [f64; 4] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    [v[0], mean, median(&v), v[v.len() - 1]]
}

pub fn ablate1d(a: &Ablate1dArgs, jobs: usize, m: &mut RunManifest) -> CliResult<PathBuf> {
    let seeds = parse_seeds(&a.seeds)?;
    let modes: Vec<String> = parse_list(&a.modes, "modes")?;
    let datasets: Vec<CropDataset1D> = seeds.iter().map(|&s| seeded_dataset(s, a.n)).collect::<Result<_>>().map_err(lib_err)?;
    let runs: Vec<(usize, &String)> = (0..seeds.len()).flat_map(|i| modes.iter().map(move |md| (i, md))).collect();
    // validate every configuration before spending time on training
    for (i, md) in &runs {
        let config = train_config(md, a.n_order, a.lr, a.batch, a.steps, seeds[*i]);
        modpose::train1d::StrategyRegistry::with_defaults().get(&config.mode).map_err(lib_err)?;
        config.validate(datasets[*i].len()).map_err(lib_err)?;
    }
    let pool = thread_pool(jobs).map_err(lib_err)?;
    let reports: Vec<RunReport> = pool
        .install(|| {
            runs.par_iter()
                .map(|(i, md)| {
                    let config = train_config(md, a.n_order, a.lr, a.batch, a.steps, seeds[*i]);
                    train(&datasets[*i], &config).map(|(_, r)| r)
                })
                .collect::<Result<_>>()
        })
        .map_err(lib_err)?;
    m.seeds = seeds.clone();

    for ((i, md), r) in runs.iter().zip(&reports) {
        let path = a.out.join("reports").join(format!("seed{}_{md}.csv", seeds[*i]));
        m.write(&path, Magic::CsvHeader(REPORT_HEADER), |w| r.write_csv(w))?;
    }
    m.write(&a.out.join("runs.csv"), Magic::CsvHeader(RUNS_HEADER), |w| {
        writeln!(w, "{RUNS_HEADER}")?;
        for ((i, md), r) in runs.iter().zip(&reports) {
            let last = r.losses.last().copied().unwrap_or(f64::NAN);
            writeln!(
                w,
                "{},{md},{},{},{}",
                seeds[*i],
                fmt_f64(r.angular_error.to_degrees()),
                fmt_f64(r.reconstruction_mse),
                fmt_f64(last)
            )?;
        }
        Ok(())
    })?;
    m.write(&a.out.join("summary.csv"), Magic::CsvHeader(SUMMARY_HEADER), |w| {
        writeln!(w, "{SUMMARY_HEADER}")?;
        for md in &modes {
            let mine: Vec<&RunReport> = runs.iter().zip(&reports).filter(|((_, x), _)| *x == md).map(|(_, r)| r).collect();
            let err: Vec<f64> = mine.iter().map(|r| r.angular_error.to_degrees()).collect();
            let mse: Vec<f64> = mine.iter().map(|r| r.reconstruction_mse).collect();
            let cells: Vec<String> = stats(&err).into_iter().chain(stats(&mse)).map(fmt_f64).collect();
            writeln!(w, "{md},{},{}", mine.len(), cells.join(","))?;
        }
        Ok(())
    })?;
    Ok(a.out.join(MANIFEST_NAME))
}

pub fn gen3d(a: &Gen3dArgs, m: &mut RunManifest) -> CliResult<PathBuf> {
    let set = generate_rgb_melon(a.k, a.views, a.seed).map_err(lib_err)?;
    m.seeds = vec![a.seed];
    m.write(&a.out.join("poses.csv"), Magic::CsvHeader(POSE_HEADER), |w| write_pose_csv(w, &set.cameras))?;
    m.write(&a.out.join("split.csv"), Magic::CsvHeader(SPLIT_HEADER), |w| {
        writeln!(w, "{SPLIT_HEADER}")?;
        for i in 0..set.cameras.len() {
            writeln!(w, "{i},{}", if set.test.contains(&i) { "test" } else { "train" })?;
        }
        Ok(())
    })?;
    let width = set.images.len().to_string().len().max(3);
    for (i, img) in set.images.iter().enumerate() {
        let path = a.out.join(format!("view_{i:0width$}.ppm"));
        m.write(&path, Magic::Bytes(b"P6\n"), |w| write_ppm(w, img))?;
    }
    Ok(a.out.join(MANIFEST_NAME))
}

pub fn ssm(a: &SsmArgs, jobs: usize, m: &mut RunManifest) -> CliResult<PathBuf> {
    let coords: Vec<f64> = parse_list(&a.reference, "reference pose")?;
    let bins: Vec<usize> = parse_list(&a.bins, "bins")?;
    let (kind, source) = (a.scene[0].as_str(), a.scene[1].as_str());
    let renderer: Box<dyn PoseRenderer> = match kind {
        "1d" => {
            if coords.len() != 1 || bins.len() != 1 {
                return fail(Exit::InvalidArgument, "1d scenes take a single azimuth and a single bin count");
            }
            Box::new(CropRenderer::new(read_dataset(Path::new(source))?.function()))
        }
        "3d" => {
            let k: usize = source.parse().or_else(|_| fail(Exit::Usage, format!("bad symmetry order '{source}'")))?;
            Box::new(sphere(k, a.resolution)?)
        }
        _ => return fail(Exit::Usage, format!("scene kind must be 1d or 3d, got '{kind}'")),
    };
    let grid = match bins.as_slice() {
        [az] => GridSpec::equator(*az),
        [az, el] => GridSpec::full(*az, *el),
        _ => return fail(Exit::Usage, "bins must be A or A,E"),
    }
    .map_err(lib_err)?;
    let reference = match coords.as_slice() {
        [az] => PoseSO3::equator(Angle::new(*az).map_err(lib_err)?),
        [az, el] => PoseSO3::new(*az, *el, 0.0).map_err(lib_err)?,
        _ => return fail(Exit::Usage, "reference must be azimuth or azimuth,elevation"),
    };
    let map = ssm_grid(renderer.as_ref(), &reference, &grid, jobs).map_err(lib_err)?;
    let map = quotient_ssm(&map, a.order).map_err(lib_err)?;
    m.write(&a.out.join("map.csv"), Magic::CsvCommentedHeader(MAP_COLUMNS), |w| write_map_csv(w, &map))?;
    let mut range = (0.0, 0.0);
    m.write(&a.out.join("map.pgm"), Magic::Bytes(b"P5\n"), |w| {
        range = write_map_pgm(w, &map)?;
        Ok(())
    })?;
    m.write(&a.out.join("map.pgm.txt"), Magic::Bytes(b"min="), |w| write_pgm_sidecar(w, range.0, range.1))?;
    Ok(a.out.join(MANIFEST_NAME))
}

pub fn roa(a: &RoaArgs, m: &mut RunManifest) -> CliResult<PathBuf> {
    let map = read_map_csv(open_input(&a.map)?).map_err(|e| input_err(&a.map, e))?;
    let region = region_of_attraction(&map).map_err(lib_err)?;
    m.write(&a.out.join("region.pbm"), Magic::Bytes(b"P4\n"), |w| write_region_pbm(w, &region))?;
    m.write(&a.out.join("region.csv"), Magic::CsvHeader(REGION_HEADER), |w| {
        writeln!(w, "{REGION_HEADER}")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            region.members.len(),
            region.count(),
            fmt_f64(region.coverage),
            region.seed,
            region.degenerate
        )?;
        Ok(())
    })?;
    println!("{}", fmt_f64(region.coverage));
    Ok(a.out.join(MANIFEST_NAME))
}

pub fn difficulty(a: &DifficultyArgs, jobs: usize, m: &mut RunManifest) -> CliResult<PathBuf> {
    let orders: Vec<usize> = parse_list(&a.n_orders, "replication orders")?;
    let renderer = sphere(a.k, a.resolution)?;
    let grid = GridSpec::equator(a.bins).map_err(lib_err)?;
    let entries =
        modpose::analysis::difficulty_table(&renderer, &orders, a.refs, &grid, a.seed, jobs).map_err(lib_err)?;
    let report = DifficultyReport {
        symmetry: Some(a.k),
        azimuth_bins: grid.azimuth_bins,
        elevation_bins: grid.elevation_bins(),
        resolution: a.resolution,
        entries,
    };
    m.seeds = vec![a.seed];
    m.write(&a.out, Magic::CsvHeader(DIFFICULTY_HEADER), |w| write_difficulty_csv(w, &report))?;
    Ok(sidecar(&a.out))
}

pub fn descent(a: &DescentArgs, m: &mut RunManifest) -> CliResult<PathBuf> {
    let renderer = sphere(a.k, a.resolution)?;
    let grid = GridSpec::equator(a.bins).map_err(lib_err)?;
    let reference = PoseSO3::equator(Angle::new(a.reference).map_err(lib_err)?);
    let start = PoseSO3::equator(Angle::new(a.start).map_err(lib_err)?);
    let options = DescentOptions {
        step: a.step,
        max_iters: a.max_iters,
        spacing: grid.spacing(),
        relation: EquivalenceRelation::new(a.n_order).map_err(lib_err)?,
    };
    let d = pose_descent(&renderer, &reference, &start, options).map_err(lib_err)?;
    m.write(&a.out, Magic::CsvHeader(TRAJECTORY_HEADER), |w| write_trajectory_csv(w, &d))?;
    println!("converged={} final_distance_deg={}", d.converged, fmt_f64(d.final_distance.to_degrees()));
    Ok(sidecar(&a.out))
}
