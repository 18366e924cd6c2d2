use std::path::PathBuf;

use anyhow::Result;
use stereo_shape::kitti_io::{write_mesh_obj, write_mesh_stl};
use stereo_shape::occupancy::{
    mixed_resolution_extract, AnalyticField, OccupancyField, TabulatedField, TriangleMesh, UniformGrid, DEFAULT_ISO,
};
use stereo_shape::voxel::Tensor;
use stereo_shape::Point3;

use crate::{config_error, in_file, read_bytes, write_file};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Analytic field, e.g. `sphere radius=0.4` or `box half=0.3,0.2,0.2`.
    #[arg(long, conflicts_with = "field", required_unless_present = "field")]
    pub spec: Option<String>,
    /// Tabulated field in the flat tensor format (3 dims over `[-0.5, 0.5]^3`).
    #[arg(long)]
    pub field: Option<PathBuf>,
    /// Grid nodes per axis: `N` or `NX,NY,NZ`.
    #[arg(long, default_value = "32")]
    pub grid: String,
    /// Grid bounds `xmin,ymin,zmin,xmax,ymax,zmax`.
    #[arg(long, default_value = "-0.5,-0.5,-0.5,0.5,0.5,0.5", allow_hyphen_values = true)]
    pub bounds: String,
    /// Mixed-resolution region `LO:HI:N` along `--split-axis`, repeatable;
    /// overrides `--grid`.
    #[arg(long = "region", value_name = "LO:HI:N", allow_hyphen_values = true)]
    pub regions: Vec<String>,
    /// Axis the regions partition.
    #[arg(long, default_value = "x", value_parser = ["x", "y", "z"])]
    pub split_axis: String,
    #[arg(long, default_value_t = DEFAULT_ISO)]
    pub iso: f64,
    /// Output mesh; `.stl` writes binary STL, anything else OBJ.
    #[arg(long)]
    pub out: PathBuf,
}

fn numbers(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| config_error(format!("{what} `{s}` must be comma-separated numbers")))
}

fn parse_nodes(s: &str) -> Result<[usize; 3]> {
    let vals = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().ok())
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| config_error(format!("grid `{s}` must be N or NX,NY,NZ")))?;
    match vals[..] {
        [n] => Ok([n; 3]),
        [x, y, z] => Ok([x, y, z]),
        _ => Err(config_error(format!("grid `{s}` must be N or NX,NY,NZ"))),
    }
}

fn grids(args: &Args) -> Result<Vec<UniformGrid>> {
    let b = numbers(&args.bounds, "bounds")?;
    if b.len() != 6 {
        return Err(config_error("bounds need 6 values"));
    }
    let (min, max) = (Point3::new(b[0], b[1], b[2]), Point3::new(b[3], b[4], b[5]));
    let grid_err = |e: stereo_shape::Error| config_error(e.to_string());
    if args.regions.is_empty() {
        return Ok(vec![UniformGrid::new(min, max, parse_nodes(&args.grid)?).map_err(grid_err)?]);
    }
    let axis = match args.split_axis.as_str() {
        "x" => 0,
        "y" => 1,
        _ => 2,
    };
    args.regions
        .iter()
        .map(|r| {
            let parts: Vec<&str> = r.split(':').collect();
            let bad = || config_error(format!("region `{r}` must be LO:HI:N"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
            let (mut rmin, mut rmax) = (min, max);
            rmin[axis] = lo;
            rmax[axis] = hi;
            UniformGrid::new(rmin, rmax, [n; 3]).map_err(grid_err)
        })
        .collect()
}

pub fn run(args: Args) -> Result<()> {
    let field: Box<dyn OccupancyField> = match (&args.spec, &args.field) {
        (Some(spec), _) => Box::new(AnalyticField::parse_spec(spec)?),
        (None, Some(path)) => {
            let t = in_file(Tensor::parse(&read_bytes(path)?), path)?;
            Box::new(in_file(TabulatedField::from_tensor(&t), path)?)
        }
        (None, None) => return Err(config_error("one of --spec or --field is required")),
    };
    let grids = grids(&args)?;
    let mixed = mixed_resolution_extract(field.as_ref(), &grids, args.iso)?;
    let mesh: TriangleMesh = mixed.merged();
    if mixed.regions.len() > 1 {
        for (i, (m, g)) in mixed.regions.iter().zip(&grids).enumerate() {
            let n = g.nodes();
            println!(
                "region {i} ({}x{}x{}): {} vertices, {} triangles",
                n[0],
                n[1],
                n[2],
                m.vertices().len(),
                m.triangles().len()
            );
        }
    }
    println!("vertices: {}", mesh.vertices().len());
    println!("triangles: {}", mesh.triangles().len());
    if mesh.is_empty() {
        eprintln!("warning: field never crosses iso {}; mesh is empty", args.iso);
    } else {
        println!("closed manifold: {}", if mesh.is_closed_manifold() { "yes" } else { "no" });
    }
    let stl = args.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("stl"));
    if stl {
        write_file(&args.out, write_mesh_stl(&mesh))?;
    } else {
        write_file(&args.out, write_mesh_obj(&mesh))?;
    }
    Ok(())
}
