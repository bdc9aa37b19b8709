from src.commands import base_parser, cmd_efficiency_sweep, config_from_args, run_command


def main():
    parser = base_parser("Efficiency against the number of dates or against sqrt(Gamma)")
    parser.add_argument("--kind", choices=["n", "sqrt_gamma"], default=None, help="Override sweep.kind")
    parser.add_argument("--values", type=float, nargs="+", default=None, help="Override sweep.values")
    parser.add_argument("--no-known-start", action="store_true", help="Skip the known initial value curves")
    args = parser.parse_args()
    cfg = config_from_args(args)
    if args.kind:
        cfg.sweep.kind = args.kind
    if args.values:
        cfg.sweep.values = list(args.values)
    if args.no_known_start:
        cfg.sweep.known_start = False
    paths = run_command(cmd_efficiency_sweep, cfg)
    print(f"[SWEEP] kind={cfg.sweep.kind} wrote {len(paths)} files to {cfg.output.dir}")


if __name__ == "__main__":
    main()
