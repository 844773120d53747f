use clap::{Parser, Subcommand};

use axiprof::mesh::Space;

#[derive(Parser)]
#[command(name = "axiprof", version, about = "Self-similar axisymmetric profile laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mesh and report its sizes
    MeshInfo {
        /// Half-width of the computational box
        #[arg(long)]
        radius: f64,
        /// Square columns across the radius (even, at least 4)
        #[arg(long)]
        resolution: usize,
    },
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::MeshInfo { radius, resolution } => mesh_info(radius, resolution),
    };
    std::process::exit(code);
}

fn mesh_info(radius: f64, resolution: usize) -> i32 {
    let space = match Space::build(radius, resolution) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("mesh error: {e}");
            return 2;
        }
    };
    let mesh = &space.mesh;
    let dofs = &space.dofs;
    println!("radius        {}", mesh.radius);
    println!("resolution    {}", mesh.n);
    println!("vertices      {}", mesh.vertices.len());
    println!("triangles     {}", mesh.triangles.len());
    println!("p2 nodes      {}", dofs.n_p2());
    println!("velocity dofs {}", dofs.n_velocity());
    println!("total dofs    {}", dofs.n_velocity() + dofs.n_pressure());
    println!("mesh hash     {:016x}", mesh.hash());
    0
}
