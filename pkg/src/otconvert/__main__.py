from otconvert.cli import main

main()
